"""Synaptic activity traces and spike-timing-dependent plasticity.

Weight matrices are indexed ``[..., pre, post]``. Traces are updated with the
current step's spikes before a rule reads them, i.e. ``x(t) = alpha x(t-1) +
f(x) s(t)``; the triplet rule's slow post-synaptic trace is read one step
earlier so the post spike that triggers potentiation does not pair with itself.

Each rule is expressed through *factors*: potentiation is
``A+(W) * outer(a_plus, b_plus)`` and depression ``A-(W) * outer(a_minus,
b_minus)``. The network feeds the same factors straight into the eligibility
traces, so the rule definitions here are the single source of truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from . import ops
from .autodiff import apply, data_of, defop, is_value
from .neuron import ShapeMismatchError

LTP = "LTP"
LTD = "LTD"


@dataclass
class TraceParams:
    alpha_x: Any = 0.9
    beta: Any = 1.0
    x_max: float = 1.0
    form: str = "linear"

    def __post_init__(self):
        if self.form not in ("linear", "saturating"):
            raise ValueError(f"trace form must be 'linear' or 'saturating', got {self.form!r}")
        if self.form == "saturating" and not self.x_max > 0:
            raise ValueError("saturating traces need x_max > 0")


@dataclass
class PlasticityParams:
    """STDP rates, weight dependence and bounds.

    ``eta_plus``/``eta_minus`` may be scalars or ``(n_pre, n_post)`` arrays (or
    tape Values when they are being learned).
    """

    eta_plus: Any = 0.1
    eta_minus: Any = 0.1
    mu: Any = 0.0
    w_min: float = 0.0
    w_max: float = 1.0
    slow_alpha: Any = 0.99

    def __post_init__(self):
        if not self.w_min < self.w_max:
            raise ValueError("w_min must be below w_max")
        mu = float(np.asarray(data_of(self.mu)))
        if not 0.0 <= mu <= 1.0:
            raise ValueError("mu must lie in [0, 1]")


def trace_step(x, s, p: TraceParams):
    """Decay a trace and add the spike-triggered increment.

    linear:     x' = alpha_x x + beta s
    saturating: x' = alpha_x x + beta (x_max - x) s
    """
    if np.shape(data_of(x)) != np.shape(data_of(s)):
        raise ShapeMismatchError(
            f"trace shape {np.shape(data_of(x))} != spike shape {np.shape(data_of(s))}"
        )
    return apply("trace", x, s, p.alpha_x, p.beta, float(p.x_max), form=p.form)


def _safe_pow_fwd(a, p):
    return np.power(np.maximum(a, 0.0), p)


def _safe_pow_vjp(go, o, args, at, n):
    a, p = args
    g = go[0]
    pos = a > 0
    ap = np.where(pos, a, 1.0)
    ga = gp = None
    if n[0]:
        ga = np.where(pos, g * p * np.power(ap, p - 1.0), 0.0)
        ga = ops.unbroadcast(ga, np.shape(a))
    if n[1]:
        gp = ops.unbroadcast(np.where(pos, g * o[0] * np.log(ap), 0.0), np.shape(p))
    return (ga, gp)


defop("safe_pow", _safe_pow_fwd, _safe_pow_vjp)


def weight_dependence(W, p: PlasticityParams, direction: str):
    """Scale ``A+(W) = eta+ (W_max - W)^mu`` or ``A-(W) = eta- (W - W_min)^mu``.

    The base is clamped at zero before exponentiation. With ``mu == 0`` this is
    the additive rule and returns the rates unchanged.
    """
    if direction == LTP:
        eta, base = p.eta_plus, ops.sub(p.w_max, W)
    elif direction == LTD:
        eta, base = p.eta_minus, ops.sub(W, p.w_min)
    else:
        raise ValueError(f"direction must be {LTP!r} or {LTD!r}")
    mu = p.mu
    if not is_value(mu) and float(mu) == 0.0:
        return ops.mul(eta, np.ones_like(data_of(W)))
    return ops.mul(eta, apply("safe_pow", base, mu))


def _check_factor_shapes(W, pre, post) -> None:
    w_shape = np.shape(data_of(W))
    for name, x in pre.items():
        if np.shape(data_of(x))[-1] != w_shape[-2]:
            raise ShapeMismatchError(f"{name} length does not match {w_shape[-2]} pre-synaptic neurons")
    for name, x in post.items():
        if np.shape(data_of(x))[-1] != w_shape[-1]:
            raise ShapeMismatchError(f"{name} length does not match {w_shape[-1]} post-synaptic neurons")


def pair_factors(x_pre, x_post, s_pre, s_post):
    """((a+, b+), (a-, b-)) for the pair rule: LTP on post spikes, LTD on pre spikes."""
    return (x_pre, s_post), (s_pre, x_post)


def triplet_factors(x_pre, x_post_fast, x_post_slow_prev, s_pre, s_post):
    """Triplet rule factors; potentiation needs a post spike and the slow post trace."""
    return (x_pre, ops.mul(x_post_slow_prev, s_post)), (s_pre, x_post_fast)


def _outer(a, b):
    sa, sb = np.shape(data_of(a)), np.shape(data_of(b))
    return ops.mul(ops.reshape(a, sa + (1,)), ops.reshape(b, sb[:-1] + (1, sb[-1])))


def stdp_terms(W, factors, p: PlasticityParams):
    """Return the signed (potentiation, depression) weight-change matrices."""
    (ap, bp), (am, bm) = factors
    ltp = ops.mul(weight_dependence(W, p, LTP), _outer(ap, bp))
    ltd = ops.neg(ops.mul(weight_dependence(W, p, LTD), _outer(am, bm)))
    return ltp, ltd


def pair_stdp_delta(W, x_pre, x_post, s_pre, s_post, p: PlasticityParams):
    """``dW[i, j] = A+(W) x_pre[i] s_post[j] - A-(W) x_post[j] s_pre[i]``."""
    _check_factor_shapes(W, {"x_pre": x_pre, "s_pre": s_pre}, {"x_post": x_post, "s_post": s_post})
    ltp, ltd = stdp_terms(W, pair_factors(x_pre, x_post, s_pre, s_post), p)
    return ops.add(ltp, ltd)


def triplet_stdp_delta(W, x_pre, x_post_fast, x_post_slow_prev, s_pre, s_post, p: PlasticityParams):
    """``dW[i, j] = A+(W) x_pre[i] x_slow[j](t-1) s_post[j] - A-(W) x_post[j] s_pre[i]``."""
    _check_factor_shapes(
        W,
        {"x_pre": x_pre, "s_pre": s_pre},
        {"x_post_fast": x_post_fast, "x_post_slow_prev": x_post_slow_prev, "s_post": s_post},
    )
    factors = triplet_factors(x_pre, x_post_fast, x_post_slow_prev, s_pre, s_post)
    ltp, ltd = stdp_terms(W, factors, p)
    return ops.add(ltp, ltd)
