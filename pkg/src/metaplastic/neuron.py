"""LIF and CUBA neuron layers advanced in fixed 1 ms steps.

Update order within a step is decay/integrate, then threshold, then reset.
The reset is written ``v * (1 - s) + v_rest * s`` so the surrogate gradient
also flows through the reset gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .autodiff import SpikeFunctionConfig, data_of


class ShapeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class NeuronParams:
    alpha_v: float = 0.1
    alpha_u: float = 0.3
    v_rest: float = 0.0
    u_rest: float = 0.0
    R: float = 1.0
    v_th: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.alpha_v <= 1.0 and 0.0 <= self.alpha_u <= 1.0):
            raise ValueError("alpha_v and alpha_u must lie in [0, 1]")
        if not self.v_th > self.v_rest:
            raise ValueError("v_th must exceed v_rest")
        if not self.R > 0:
            raise ValueError("R must be positive")


@dataclass
class NeuronLayerState:
    v: object
    u: object
    s: object

    @classmethod
    def rest(cls, shape, p: NeuronParams) -> "NeuronLayerState":
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        return cls(
            v=np.full(shape, p.v_rest, dtype=np.float64),
            u=np.full(shape, p.u_rest, dtype=np.float64),
            s=np.zeros(shape, dtype=np.float64),
        )


def _check(state: NeuronLayerState, current) -> None:
    if np.shape(data_of(current)) != np.shape(data_of(state.v)):
        raise ShapeMismatchError(
            f"input current shape {np.shape(data_of(current))} "
            f"does not match layer shape {np.shape(data_of(state.v))}"
        )


def step_cuba(
    state: NeuronLayerState, current, p: NeuronParams, cfg: SpikeFunctionConfig
) -> NeuronLayerState:
    """Advance a current-based LIF layer by one step.

    u' = u - alpha_u (u - u_rest) + I
    v' = v - alpha_v (v - v_rest) + R u'
    then spike where v' > v_th and reset those neurons to v_rest.
    """
    _check(state, current)
    u, v, s = ops.cuba(
        state.u,
        state.v,
        current,
        alpha_u=p.alpha_u,
        alpha_v=p.alpha_v,
        u_rest=p.u_rest,
        v_rest=p.v_rest,
        r=p.R,
        v_th=p.v_th,
        spike_cfg=cfg,
    )
    return NeuronLayerState(v=v, u=u, s=s)


def step_lif(
    state: NeuronLayerState, current, p: NeuronParams, cfg: SpikeFunctionConfig
) -> NeuronLayerState:
    """Advance a plain LIF layer: ``v' = v - alpha_v (v - v_rest) + R I``.

    Implemented as the CUBA step with an instantaneous current trace, which is
    exactly the LIF update. ``state.u`` carries the last input current.
    """
    _check(state, current)
    u, v, s = ops.cuba(
        np.zeros_like(data_of(state.v)),
        state.v,
        current,
        alpha_u=1.0,
        alpha_v=p.alpha_v,
        u_rest=0.0,
        v_rest=p.v_rest,
        r=p.R,
        v_th=p.v_th,
        spike_cfg=cfg,
    )
    return NeuronLayerState(v=v, u=u, s=s)
