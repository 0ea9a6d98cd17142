"""Eligibility traces and third-factor gated weight updates.

Plasticity-rule output is not written to the weights directly. It accumulates
in two per-synapse traces (potentiation and depression), and a modulation
signal decides how much of each is committed at every step:

    E+/-' = gamma E+/- + alpha_e * increment+/-
    W'    = W + m_plus[k] E+ + m_minus[k] E-

where ``k`` is global, the post-synaptic index ``j`` or the pre-synaptic
index ``i``. The depression increment is stored with its negative sign, so
unit modulation on both channels reproduces the plain STDP update.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from . import ops
from .autodiff import data_of
from .neuron import ShapeMismatchError

GLOBAL = "global"
POST = "post"
PRE = "pre"


class IndexingMismatchError(ValueError):
    pass


@dataclass
class EligibilityParams:
    gamma: Any = 0.95
    alpha_e: Any = 1.0

    def __post_init__(self):
        g = float(np.asarray(data_of(self.gamma)))
        if not 0.0 <= g <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


@dataclass
class EligibilityState:
    E_plus: Any
    E_minus: Any

    @classmethod
    def zeros(cls, shape) -> "EligibilityState":
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class ModulationSignal:
    m_plus: Any
    m_minus: Any
    indexing: str = PRE

    def __post_init__(self):
        if self.indexing not in (GLOBAL, POST, PRE):
            raise ValueError(f"unknown modulation indexing {self.indexing!r}")


def eligibility_step(E: EligibilityState, ltp_increment, ltd_increment, p: EligibilityParams):
    """Decay both traces by ``gamma`` and add the rate-scaled rule increments."""
    shape = np.shape(data_of(E.E_plus))
    for name, inc in (("ltp", ltp_increment), ("ltd", ltd_increment)):
        if np.shape(data_of(inc)) != shape:
            raise ShapeMismatchError(f"{name} increment shape {np.shape(data_of(inc))} != trace shape {shape}")
    return EligibilityState(
        ops.add(ops.mul(p.gamma, E.E_plus), ops.mul(p.alpha_e, ltp_increment)),
        ops.add(ops.mul(p.gamma, E.E_minus), ops.mul(p.alpha_e, ltd_increment)),
    )


def _broadcastable(m, e_shape, indexing):
    m_shape = np.shape(data_of(m))
    batch = e_shape[:-2]
    n_pre, n_post = e_shape[-2:]
    if indexing == GLOBAL:
        if m_shape in ((), (1,)):
            return m
        if m_shape in (batch, batch + (1,)):
            return ops.reshape(m, batch + (1, 1))
    elif indexing == POST:
        if m_shape in ((n_post,), batch + (n_post,)):
            return ops.reshape(m, m_shape[:-1] + (1, n_post))
    elif indexing == PRE:
        if m_shape in ((n_pre,), batch + (n_pre,)):
            return ops.reshape(m, m_shape + (1,))
    raise IndexingMismatchError(
        f"{indexing}-indexed modulation of shape {m_shape} does not fit traces of shape {e_shape}"
    )


def modulation_views(M: ModulationSignal, e_shape):
    """Reshape ``M`` so both channels broadcast against traces of ``e_shape``."""
    return (
        _broadcastable(M.m_plus, e_shape, M.indexing),
        _broadcastable(M.m_minus, e_shape, M.indexing),
    )


def apply_modulation(W, E: EligibilityState, M: ModulationSignal, clamp: tuple[float, float] | None = None):
    """Commit modulated eligibility to the weights, optionally hard-clamping."""
    e_shape = np.shape(data_of(E.E_plus))
    mp, mm = modulation_views(M, e_shape)
    lo, hi = clamp if clamp is not None else (-np.inf, np.inf)
    return ops.modulated_update(W, E.E_plus, E.E_minus, mp, mm, lo, hi)


def response_function(M, b, h: Callable | None = None) -> ModulationSignal:
    """Neuron-specific response ``h(b_j M)`` broadcast to both channels."""
    m = ops.mul(b, M)
    if h is not None:
        m = h(m)
    return ModulationSignal(m, m, POST)
