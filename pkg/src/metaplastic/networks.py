"""The two-network system: a plastic task network and its neuromodulator.

The DP-SNN has one hidden layer of CUBA neurons. Its input->hidden synapses
are plastic within an episode; hidden->output weights are ordinary outer-loop
parameters. The NM-SNN is a two-layer, fully connected, non-plastic CUBA
network whose linear readout emits the (m_plus, m_minus) modulation for every
DP-SNN input neuron.

Parameters travel as a plain ``dict[str, array-or-Value]`` so the same step
functions serve the recorded (gradient) path and the untaped evaluation path.
Fixed structure (connectivity signs, neuron constants) lives in the config
objects below.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import ops
from .autodiff import SpikeFunctionConfig, apply, data_of, is_value
from .neuromodulation import PRE, EligibilityState, ModulationSignal, modulation_views
from .neuron import NeuronLayerState, NeuronParams, ShapeMismatchError, step_cuba
from .plasticity import TraceParams

CNN_FEATURES = 196
IMAGE_SIDE = 28


class EmptyWindowError(ValueError):
    pass


@dataclass
class ConnectivityMask:
    present: np.ndarray
    sign: np.ndarray

    @property
    def signed(self) -> np.ndarray:
        """``sign * present``: the {-1, 0, +1} pattern applied at every use."""
        return self.sign * self.present

    def inhibitory_fraction(self) -> float:
        n = self.present.sum()
        return float(((self.sign < 0) & (self.present > 0)).sum() / n) if n else 0.0


def init_connectivity(n_pre, n_post, density=0.5, inhib_frac=0.2, rng=None, w_init_scale=0.2):
    """Sample a random sparse excitatory/inhibitory layer.

    Each potential synapse exists with probability ``density``; each existing
    one is inhibitory with probability ``inhib_frac``. Returns the mask and
    uniform(0, w_init_scale) magnitudes (zero where absent).
    """
    if not (0.0 <= density <= 1.0 and 0.0 <= inhib_frac <= 1.0):
        raise ValueError("density and inhib_frac must lie in [0, 1]")
    rng = np.random.default_rng(rng)
    present = (rng.random((n_pre, n_post)) < density).astype(np.float64)
    inhib = rng.random((n_pre, n_post)) < inhib_frac
    sign = np.where(present > 0, np.where(inhib, -1.0, 1.0), 0.0)
    mags = rng.uniform(0.0, w_init_scale, size=(n_pre, n_post)) * present
    return ConnectivityMask(present=present, sign=sign), mags


# -- configs ----------------------------------------------------------------------------------


@dataclass
class DPSNNConfig:
    n_input: int
    n_hidden: int = 48
    n_output: int = 2
    rule: str = "pair"
    hidden: NeuronParams = field(default_factory=NeuronParams)
    output: NeuronParams = field(default_factory=NeuronParams)
    spike: SpikeFunctionConfig = field(default_factory=SpikeFunctionConfig)
    trace_form: str = "linear"
    x_max: float = 1.0
    mu: float = 0.0
    w_min: float = 0.0
    w_max: float = 1.0
    mask: ConnectivityMask | None = None
    detach_spike_factors: bool = False
    rate_scale: float = 1.0

    def __post_init__(self):
        if self.n_hidden <= 0 or self.n_input <= 0 or self.n_output <= 0:
            raise ValueError("layer sizes must be positive")
        if self.rule not in ("pair", "triplet"):
            raise ValueError(f"unknown plasticity rule {self.rule!r}")


@dataclass
class NMSNNConfig:
    n_in: int
    n_modulated: int
    sizes: tuple = (64, 64)
    neuron: NeuronParams = field(default_factory=NeuronParams)
    spike: SpikeFunctionConfig = field(default_factory=SpikeFunctionConfig)


# -- DP-SNN ------------------------------------------------------------------------------------


@dataclass
class DPState:
    hidden: NeuronLayerState
    output: NeuronLayerState
    x_pre: Any
    x_post: Any
    x_slow: Any
    W: Any
    E: EligibilityState


def dpsnn_init_state(batch: int, params, cfg: DPSNNConfig) -> DPState:
    """Fresh inner state: plastic weights at their initial values, traces zero."""
    n_in, n_h = cfg.n_input, cfg.n_hidden
    W = ops.add(np.zeros((batch, 1, 1)), params["w_in"])
    if not is_value(W):
        W = np.array(W)
    return DPState(
        hidden=NeuronLayerState.rest((batch, n_h), cfg.hidden),
        output=NeuronLayerState.rest((batch, cfg.n_output), cfg.output),
        x_pre=np.zeros((batch, n_in)),
        x_post=np.zeros((batch, n_h)),
        x_slow=np.zeros((batch, n_h)),
        W=W,
        E=EligibilityState.zeros((batch, n_in, n_h)),
    )


def eligibility_rates(params, cfg: DPSNNConfig):
    """Per-synapse ``rate_scale * alpha_e * eta`` with absent synapses zeroed."""
    present = cfg.mask.present * cfg.rate_scale
    ae = params["alpha_e"]
    return (
        ops.mul(ops.mul(ae, params["eta_plus"]), present),
        ops.mul(ops.mul(ae, params["eta_minus"]), present),
    )


def _trace(x, s, alpha, beta, cfg):
    return apply("trace", x, s, alpha, beta, float(cfg.x_max), form=cfg.trace_form)


def dpsnn_step(state: DPState, s_in, modulation, params, cfg: DPSNNConfig, rates=None, plastic=True,
               nm_fn=None):
    """Advance the DP-SNN by one 1 ms step.

    Neuron dynamics use the current plastic weights. When ``plastic`` is set,
    the traces, eligibility and modulated weight update follow. ``modulation``
    may be a :class:`ModulationSignal` or, when ``nm_fn`` is given, is computed
    by ``nm_fn(hidden_spikes)`` after the hidden layer has stepped (so the
    neuromodulator sees this step's hidden activity).

    Returns ``(hidden_spikes, output_spikes, new_state, modulation)``.
    """
    if np.shape(data_of(s_in))[-1] != cfg.n_input:
        raise ShapeMismatchError(
            f"input spikes have {np.shape(data_of(s_in))[-1]} channels, expected {cfg.n_input}"
        )
    signed = cfg.mask.signed
    I_h = ops.synaptic_current(s_in, state.W, signed)
    hidden = step_cuba(state.hidden, I_h, cfg.hidden, cfg.spike)
    I_o = ops.matmul(hidden.s, params["w_ho"])
    output = step_cuba(state.output, I_o, cfg.output, cfg.spike)
    if nm_fn is not None:
        modulation = nm_fn(hidden.s)
    if not plastic:
        new = DPState(hidden, output, state.x_pre, state.x_post, state.x_slow, state.W, state.E)
        return hidden.s, output.s, new, modulation

    # With detach_spike_factors the spikes entering traces and eligibility are
    # constants for differentiation: the W -> spikes -> E -> W loop is cut while
    # rates, trace constants and modulation keep their gradients.
    s_post = data_of(hidden.s) if cfg.detach_spike_factors else hidden.s
    beta = params.get("beta", 1.0)
    x_pre = _trace(state.x_pre, s_in, params["alpha_pre"], beta, cfg)
    x_post = _trace(state.x_post, s_post, params["alpha_post"], beta, cfg)
    if cfg.rule == "triplet":
        x_slow_prev = state.x_slow
        x_slow = _trace(state.x_slow, s_post, params["alpha_slow"], beta, cfg)
        b_plus = ops.mul(x_slow_prev, s_post)
    else:
        x_slow = state.x_slow
        b_plus = s_post
    if rates is None:
        rates = eligibility_rates(params, cfg)
    r_plus, r_minus = rates
    if cfg.mu != 0.0:
        wd_p = apply("safe_pow", ops.sub(cfg.w_max, state.W), cfg.mu)
        wd_m = apply("safe_pow", ops.sub(state.W, cfg.w_min), cfg.mu)
        r_plus, r_minus = ops.mul(r_plus, wd_p), ops.mul(r_minus, wd_m)
    gamma = params["gamma"]
    E_plus = ops.eligibility_outer(state.E.E_plus, gamma, r_plus, x_pre, b_plus, 1.0)
    E_minus = ops.eligibility_outer(state.E.E_minus, gamma, r_minus, s_in, x_post, -1.0)
    E = EligibilityState(E_plus, E_minus)
    if modulation is None:
        W = state.W
    else:
        mp, mm = modulation_views(modulation, np.shape(data_of(E_plus)))
        W = ops.modulated_update(state.W, E_plus, E_minus, mp, mm, cfg.w_min, cfg.w_max)
    return hidden.s, output.s, DPState(hidden, output, x_pre, x_post, x_slow, W, E), modulation


def effective_weights(state: DPState, cfg: DPSNNConfig) -> np.ndarray:
    """Signed input->hidden weights actually used for current injection."""
    return data_of(state.W) * cfg.mask.signed


# -- NM-SNN ------------------------------------------------------------------------------------


@dataclass
class NMState:
    layers: list


def nmsnn_init_state(batch: int, cfg: NMSNNConfig) -> NMState:
    return NMState([NeuronLayerState.rest((batch, n), cfg.neuron) for n in cfg.sizes])


def nmsnn_step(state: NMState, inputs, params, cfg: NMSNNConfig, gain: float = 1.0):
    """Advance the neuromodulatory network one step and read out modulation.

    ``inputs`` is the concatenated sensory/hidden/feedback vector. The readout
    of the last layer's spikes is split into ``m_plus`` (first ``n_modulated``
    columns) and ``m_minus``. ``gain`` scales the readout; 0 silences it
    exactly.
    """
    if np.shape(data_of(inputs))[-1] != cfg.n_in:
        raise ShapeMismatchError(
            f"NM-SNN input has {np.shape(data_of(inputs))[-1]} channels, expected {cfg.n_in}"
        )
    x = inputs
    layers = []
    for k, layer in enumerate(state.layers):
        nxt = step_cuba(layer, ops.matmul(x, params[f"nm_w{k}"]), cfg.neuron, cfg.spike)
        layers.append(nxt)
        x = nxt.s
    m = ops.matmul(x, params["nm_out"])
    if gain != 1.0:
        m = ops.mul(m, float(gain))
    n = cfg.n_modulated
    sig = ModulationSignal(
        apply("getitem", m, idx=(Ellipsis, slice(0, n))),
        apply("getitem", m, idx=(Ellipsis, slice(n, 2 * n))),
        PRE,
    )
    return sig, NMState(layers)


# -- CNN encoder -------------------------------------------------------------------------------


def _instance_norm(x, g, h, eps=1e-5):
    mu = ops.mean(x, axis=(2, 3), keepdims=True)
    xc = ops.sub(x, mu)
    var = ops.mean(ops.mul(xc, xc), axis=(2, 3), keepdims=True)
    xn = ops.div(xc, ops.power(ops.add(var, eps), 0.5))
    c = np.shape(data_of(g))[0]
    return ops.add(ops.mul(xn, ops.reshape(g, (1, c, 1, 1))), ops.reshape(h, (1, c, 1, 1)))


def cnn_encode(images, params):
    """Encode 28x28 images into 196 input currents.

    conv(1->4, 3x3, pad 1) -> instance norm -> ReLU -> 2x2 max pool, twice,
    then flatten. Accepts a single image or a ``(N, 28, 28)`` stack.
    """
    arr = np.asarray(data_of(images))
    single = arr.ndim == 2
    if arr.shape[-2:] != (IMAGE_SIDE, IMAGE_SIDE) or arr.ndim not in (2, 3):
        raise ShapeMismatchError(f"expected 28x28 image(s), got shape {arr.shape}")
    x = arr.reshape(-1, 1, IMAGE_SIDE, IMAGE_SIDE)
    for k in (1, 2):
        x = ops.conv2d(x, params[f"cnn_w{k}"], params[f"cnn_b{k}"], pad=1)
        x = _instance_norm(x, params[f"cnn_g{k}"], params[f"cnn_h{k}"])
        x = ops.maxpool2(ops.relu(x))
    out = ops.reshape(x, (np.shape(data_of(x))[0], CNN_FEATURES))
    if single:
        out = ops.reshape(out, (CNN_FEATURES,))
    return out


# -- readout -----------------------------------------------------------------------------------


def readout(window_spikes, weights):
    """Score ``w_i * sum_t s_i(t)`` from a list of per-step spike arrays.

    The probability form is ``sigmoid(score)``; losses use the score directly.
    """
    if len(window_spikes) == 0:
        raise EmptyWindowError("readout window is empty")
    counts = window_spikes[0]
    for s in window_spikes[1:]:
        counts = ops.add(counts, s)
    return ops.mul(counts, weights)


# -- parameter initialisation ----------------------------------------------------------------


def _uniform(rng, shape, scale):
    return rng.uniform(-scale, scale, size=shape)


def init_parameters(cfg, n_input: int, n_output: int, nm_extra: int, rng, with_cnn=False):
    """Draw the outer-loop parameters ω and the fixed connectivity mask.

    Args:
        cfg: a :class:`~metaplastic.config.TrainConfig`.
        n_input: DP-SNN input width (sensory channels).
        n_output: DP-SNN output neurons.
        nm_extra: extra NM-SNN input channels (feedback).
        rng: numpy Generator.
        with_cnn: also initialise the image encoder.

    Returns:
        ``(params, mask)``.
    """
    net, pl = cfg.network, cfg.plasticity
    n_h = net.n_hidden
    mask, mags = init_connectivity(n_input, n_h, net.density, net.inhib_frac, rng, net.w_init_scale)
    mags = np.clip(mags, pl.w_min, pl.w_max) * mask.present
    syn_shape = (n_input, n_h)
    params = {
        "w_in": mags,
        "eta_plus": np.full(syn_shape if pl.eta_granularity == "synapse" else (), pl.eta_plus),
        "eta_minus": np.full(syn_shape if pl.eta_granularity == "synapse" else (), pl.eta_minus),
        "alpha_e": np.full(syn_shape if pl.alpha_e_granularity == "synapse" else (), pl.alpha_e),
        "gamma": np.array(pl.gamma),
        "alpha_pre": np.array(pl.alpha_pre),
        "alpha_post": np.array(pl.alpha_post),
        "beta": np.array(pl.beta),
        # Non-negative hidden->output drive and, with two outputs, a signed
        # readout (+r, -r): the score difference then tracks total evidence,
        # which gives the modulation pathway a usable gradient from the start.
        "w_ho": rng.uniform(0.0, net.hidden_output_scale, size=(n_h, n_output)),
        "readout": net.readout_init * (np.array([1.0, -1.0]) if n_output == 2 else np.ones(n_output)),
    }
    if pl.rule == "triplet":
        params["alpha_slow"] = np.array(pl.alpha_slow)
    sizes = list(net.nm_sizes)
    n_nm_in = n_input + n_h + nm_extra
    dims = [n_nm_in] + sizes
    for k in range(len(sizes)):
        params[f"nm_w{k}"] = _uniform(rng, (dims[k], dims[k + 1]), net.nm_input_scale / np.sqrt(dims[k]) * 3)
    params["nm_out"] = _uniform(rng, (sizes[-1], 2 * n_input), net.nm_readout_scale)
    if with_cnn:
        params["cnn_w1"] = rng.normal(0.0, np.sqrt(2.0 / 9.0), size=(4, 1, 3, 3))
        params["cnn_b1"] = np.zeros(4)
        params["cnn_g1"] = np.ones(4)
        params["cnn_h1"] = np.zeros(4)
        params["cnn_w2"] = rng.normal(0.0, np.sqrt(2.0 / 36.0), size=(4, 4, 3, 3))
        params["cnn_b2"] = np.zeros(4)
        params["cnn_g2"] = np.ones(4)
        params["cnn_h2"] = np.zeros(4)
    return params, mask


def learnable_names(params, learn) -> list[str]:
    """Resolve the ``train.learn`` list (``"all"`` or name prefixes) to parameter names."""
    if "all" in learn:
        names = list(params)
        if "beta" in names:
            names.remove("beta")
        return sorted(names)
    out = [n for n in params if any(n == p or n.startswith(p) for p in learn)]
    return sorted(out)


def project_parameters(params, cfg, mask: ConnectivityMask) -> dict:
    """Map parameters back onto their feasible sets after an outer update."""
    pl = cfg.plasticity
    out = dict(params)
    out["w_in"] = np.clip(params["w_in"], pl.w_min, pl.w_max) * mask.present
    for k in ("eta_plus", "eta_minus", "alpha_e", "beta"):
        if k in out:
            out[k] = np.maximum(params[k], 0.0)
    for k in ("gamma", "alpha_pre", "alpha_post", "alpha_slow"):
        if k in out:
            out[k] = np.clip(params[k], 0.0, 1.0)
    if "alpha_slow" in out:
        out["alpha_slow"] = np.maximum(out["alpha_slow"], out["alpha_post"])
    return out


def build_dpsnn_config(cfg, n_input: int, n_output: int, mask: ConnectivityMask) -> DPSNNConfig:
    net, pl, sp = cfg.network, cfg.plasticity, cfg.spike
    spike = SpikeFunctionConfig(sp.mode, sp.surrogate_scale, sp.surrogate_magnitude)
    return DPSNNConfig(
        n_input=n_input,
        n_hidden=net.n_hidden,
        n_output=n_output,
        rule=pl.rule,
        hidden=NeuronParams(**vars(net.hidden)),
        output=NeuronParams(**vars(net.output)),
        spike=spike,
        trace_form=pl.trace_form,
        x_max=pl.x_max,
        mu=pl.mu,
        w_min=pl.w_min,
        w_max=pl.w_max,
        mask=mask,
        detach_spike_factors=pl.detach_spike_factors,
        rate_scale=pl.rate_scale,
    )


def build_nmsnn_config(cfg, n_in: int, n_modulated: int) -> NMSNNConfig:
    sp = cfg.spike
    return NMSNNConfig(
        n_in=n_in,
        n_modulated=n_modulated,
        sizes=tuple(cfg.network.nm_sizes),
        neuron=NeuronParams(**vars(cfg.network.nm)),
        spike=SpikeFunctionConfig(sp.mode, sp.surrogate_scale, sp.surrogate_magnitude),
    )


def trace_params(params, cfg) -> TraceParams:
    """Presynaptic trace parameters as a :class:`TraceParams` (used by diagnostics)."""
    return TraceParams(params["alpha_pre"], params.get("beta", 1.0), cfg.plasticity.x_max, cfg.plasticity.trace_form)
