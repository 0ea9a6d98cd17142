"""Random smooth-mode programs for verifying reverse-mode gradients.

Each program is a tiny DP-SNN (at most 10 neurons, at most 50 steps) with a
randomly chosen plasticity variant: pair or triplet rule, linear or
saturating traces, additive or weight-dependent scaling, and a modulation
signal that is either fixed (global, post- or pre-indexed) or produced by a
small neuromodulatory network. The loss is the two-channel BCE used for the
cue task, so every operation kind the training path uses is exercised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .autodiff import SpikeFunctionConfig, Tape, backward, data_of, finite_difference_check
from .networks import ConnectivityMask, DPSNNConfig, NMSNNConfig, dpsnn_init_state, dpsnn_step, nmsnn_init_state, nmsnn_step, readout
from .neuromodulation import GLOBAL, POST, PRE, ModulationSignal
from .neuron import NeuronParams

# A wide logistic keeps every neuron in a sensitive regime, so no gradient
# is so small that finite-difference roundoff dominates the comparison.
SMOOTH = SpikeFunctionConfig(mode="smooth", surrogate_scale=1.0, surrogate_magnitude=0.3)


@dataclass
class RandomProgram:
    """A sampled program: call it with a parameter dict to get the scalar loss."""

    cfg: DPSNNConfig
    params: dict
    inputs: np.ndarray  # (T, n_in)
    label: int
    modulation: ModulationSignal | None
    nm: NMSNNConfig | None
    description: str
    w_extent: float = 0.0  # largest |W| seen in the most recent forward pass

    def __call__(self, P):
        state = dpsnn_init_state(1, P, self.cfg)
        nm_state = {"s": nmsnn_init_state(1, self.nm)} if self.nm is not None else None
        window = []
        self.w_extent = 0.0
        T = self.inputs.shape[0]
        for t in range(T):
            s_in = self.inputs[None, t]
            nm_fn = None
            if nm_state is not None:
                def nm_fn(hs, s_in=s_in):
                    sig, nm_state["s"] = nmsnn_step(nm_state["s"], ops.concat([s_in, hs], axis=-1), P, self.nm)
                    return sig
            _, os_, state, _ = dpsnn_step(state, s_in, self.modulation, P, self.cfg, plastic=True, nm_fn=nm_fn)
            self.w_extent = max(self.w_extent, float(np.max(np.abs(data_of(state.W)))))
            if t >= T - 10:
                window.append(os_)
        z = readout(window, P["readout"])
        y = np.eye(2)[[self.label]]
        return ops.sum_(ops.bce_with_logits(z, y))


def sample_program(rng) -> RandomProgram:
    """Draw one random small program (deterministic given ``rng``)."""
    n_in = int(rng.integers(2, 5))
    n_h = int(rng.integers(2, 5))
    n_out = 2
    T = int(rng.integers(15, 31))
    rule = str(rng.choice(["pair", "triplet"]))
    form = str(rng.choice(["linear", "saturating"]))
    mu = float(rng.choice([0.0, 0.5, 1.0]))
    present = np.ones((n_in, n_h))
    present[rng.random((n_in, n_h)) < 0.2] = 0.0
    sign = np.where(rng.random((n_in, n_h)) < 0.25, -1.0, 1.0) * present
    mask = ConnectivityMask(present, sign)
    # Wide bounds keep the weight clamp inactive so the program stays smooth.
    w_min, w_max = -5.0, 5.0
    neuron = NeuronParams(alpha_v=0.2, alpha_u=0.4, R=1.0, v_th=1.0)
    cfg = DPSNNConfig(
        n_input=n_in, n_hidden=n_h, n_output=n_out, rule=rule, hidden=neuron, output=neuron, spike=SMOOTH,
        trace_form=form, x_max=1.5, mu=mu, w_min=w_min, w_max=w_max, mask=mask, detach_spike_factors=False,
    )
    params = {
        "w_in": rng.uniform(0.3, 1.2, size=(n_in, n_h)) * present,
        "eta_plus": np.array(rng.uniform(0.5, 1.5)),
        "eta_minus": np.array(rng.uniform(0.5, 1.5)),
        "alpha_e": rng.uniform(0.1, 0.5, size=(n_in, n_h)) if rng.random() < 0.5 else np.array(0.3),
        "gamma": np.array(rng.uniform(0.7, 0.95)),
        "alpha_pre": np.array(rng.uniform(0.6, 0.9)),
        "alpha_post": np.array(rng.uniform(0.6, 0.85)),
        "beta": np.array(rng.uniform(0.5, 1.0)),
        "w_ho": rng.uniform(0.3, 1.5, size=(n_h, n_out)),
        "readout": rng.uniform(-1.0, 1.0, size=n_out),
    }
    if rule == "triplet":
        params["alpha_slow"] = np.array(rng.uniform(0.9, 0.97))
    inputs = (rng.random((T, n_in)) < 0.4).astype(np.float64)
    kind = str(rng.choice(["global", "post", "pre", "network"]))
    modulation = nm = None
    if kind == "network":
        n_nm = int(rng.integers(2, 4))
        nm = NMSNNConfig(n_in=n_in + n_h, n_modulated=n_in, sizes=(n_nm,), neuron=neuron, spike=SMOOTH)
        params["nm_w0"] = rng.uniform(0.0, 1.5, size=(n_in + n_h, n_nm))
        params["nm_out"] = rng.uniform(-0.1, 0.1, size=(n_nm, 2 * n_in))
    else:
        size = {"global": 1, "post": n_h, "pre": n_in}[kind]
        idx = {"global": GLOBAL, "post": POST, "pre": PRE}[kind]
        modulation = ModulationSignal(rng.uniform(-0.1, 0.1, size), rng.uniform(-0.1, 0.1, size), idx)
    desc = f"{rule}/{form}/mu={mu}/{kind} n_in={n_in} n_h={n_h} T={T}"
    return RandomProgram(cfg, params, inputs, int(rng.integers(0, 2)), modulation, nm, desc)


def well_conditioned(prog: RandomProgram, floor: float = 1e-5) -> bool:
    """True when the program is smooth and every gradient is resolvable.

    The weight clamp must stay inactive (a clamp is a kink), and no gradient
    element may be nonzero yet below ``floor``: at eps=1e-4 the difference
    quotient carries roundoff near 1e-10, which swamps such gradients. Exact
    zeros are checkable (both sides give 0) and are kept.
    """
    tape = Tape()
    grads = backward(prog({k: tape.parameter(k, v) for k, v in prog.params.items()}))
    if prog.w_extent > 0.9 * prog.cfg.w_max:
        return False
    for g in grads.values():
        a = np.abs(g)
        if np.any((a > 0) & (a < floor)):
            return False
    return True


def check_program(prog: RandomProgram, eps: float = 1e-4) -> float:
    return finite_difference_check(prog, prog.params, eps=eps)


def random_program_suite(n: int, seed: int = 0, eps: float = 1e-4, report=None) -> float:
    """Worst relative error over ``n`` random programs.

    ``report(i, description, err)`` is called after each program if given.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n):
        prog = sample_program(rng)
        while not well_conditioned(prog):
            prog = sample_program(rng)
        err = check_program(prog, eps)
        if report is not None:
            report(i, prog.description, err)
        worst = max(worst, err)
    return worst
