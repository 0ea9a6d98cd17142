"""Reverse-mode automatic differentiation over dense numpy arrays.

Every differentiable operation is registered as an *operation kind* with a
forward function and a vector-Jacobian product (VJP). Calling an operation
through :func:`apply` runs the forward on raw arrays; if any argument is a
:class:`Value` the result is also recorded on that value's :class:`Tape`.
Plain arrays in, plain arrays out -- the same model code therefore serves both
the gradient-recording training path and the cheap evaluation path.

Nodes may produce several outputs (fused neuron and synapse updates do), which
keeps the per-timestep node count and saved-activation memory small when a
simulation is unrolled over hundreds of steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Value",
    "Tape",
    "SpikeFunctionConfig",
    "FrozenTapeError",
    "NonScalarLossError",
    "NonDeterministicProgramError",
    "apply",
    "data_of",
    "is_value",
    "defop",
    "backward",
    "surrogate_spike",
    "finite_difference_check",
]


class FrozenTapeError(RuntimeError):
    """Raised when recording onto a tape that has already been differentiated."""


class NonScalarLossError(ValueError):
    pass


class NonDeterministicProgramError(RuntimeError):
    pass


@dataclass(frozen=True)
class OpDef:
    forward: Callable
    vjp: Callable
    n_out: int = 1


_OPS: dict[str, OpDef] = {}


def defop(kind: str, forward: Callable, vjp: Callable, n_out: int = 1) -> None:
    """Register an operation kind.

    ``forward(*arrays, **attrs)`` returns one array (or a tuple of ``n_out``
    arrays). ``vjp(gouts, outs, args, attrs, needs)`` receives the list of
    output cotangents (``None`` for outputs that received no gradient) and
    returns one cotangent per argument; entries where ``needs[k]`` is False may
    be ``None``.
    """
    if kind in _OPS:
        raise ValueError(f"operation kind {kind!r} already registered")
    _OPS[kind] = OpDef(forward, vjp, n_out)


class _Node:
    __slots__ = ("kind", "parents", "args", "attrs", "outs", "param")

    def __init__(self, kind, parents, args, attrs, outs, param=None):
        self.kind = kind
        self.parents = parents
        self.args = args
        self.attrs = attrs
        self.outs = outs
        self.param = param


class Value:
    """An array living on a tape.

    ``data`` is the forward value; ``grad`` is populated by :func:`backward`
    for parameter nodes and reads as zeros before that.
    """

    __slots__ = ("data", "tape", "node", "index")
    __array_priority__ = 1000

    def __init__(self, data: np.ndarray, tape: "Tape", node: int, index: int = 0):
        self.data = data
        self.tape = tape
        self.node = node
        self.index = index

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def grad(self) -> np.ndarray:
        g = self.tape.grads.get(self.node)
        if g is None or g[self.index] is None:
            return np.zeros_like(self.data)
        return g[self.index]

    def __repr__(self) -> str:
        return f"Value(node={self.node}, shape={self.data.shape})"

    # arithmetic sugar; the op implementations live in metaplastic.ops
    def __add__(self, o):
        return apply("add", self, o)

    def __radd__(self, o):
        return apply("add", o, self)

    def __sub__(self, o):
        return apply("sub", self, o)

    def __rsub__(self, o):
        return apply("sub", o, self)

    def __mul__(self, o):
        return apply("mul", self, o)

    def __rmul__(self, o):
        return apply("mul", o, self)

    def __truediv__(self, o):
        return apply("div", self, o)

    def __rtruediv__(self, o):
        return apply("div", o, self)

    def __neg__(self):
        return apply("neg", self)

    def __matmul__(self, o):
        return apply("matmul", self, o)

    def __rmatmul__(self, o):
        return apply("matmul", o, self)

    def __pow__(self, p):
        return apply("pow", self, p=float(p))

    def __getitem__(self, idx):
        return apply("getitem", self, idx=idx)

    def sum(self, axis=None, keepdims=False):
        return apply("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return apply("mean", self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply("reshape", self, shape=shape)


class Tape:
    """Ordered record of the operations applied to :class:`Value` objects."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.frozen = False
        self.params: dict[str, int] = {}
        self.grads: dict[int, list] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def parameter(self, name: str, data) -> Value:
        """Create a leaf node whose gradient is reported under ``name``."""
        if self.frozen:
            raise FrozenTapeError("tape is frozen; start a new tape for a new forward pass")
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        arr = np.array(data, dtype=np.float64)
        self.nodes.append(_Node("param", (), (), None, (arr,), param=name))
        idx = len(self.nodes) - 1
        self.params[name] = idx
        return Value(arr, self, idx)

    def record(self, kind: str, inputs: Sequence, result_data, attrs: dict | None = None):
        """Append a node computed elsewhere and return its Value(s).

        ``inputs`` may mix Values (of this tape) and constant arrays. The
        operation kind must have been registered with :func:`defop`.
        """
        if self.frozen:
            raise FrozenTapeError("cannot record on a frozen tape")
        if kind not in _OPS:
            raise KeyError(f"unknown operation kind {kind!r}")
        parents = []
        args = []
        n = len(self.nodes)
        for x in inputs:
            if isinstance(x, Value):
                if x.tape is not self:
                    raise ValueError("input belongs to a different tape")
                if not 0 <= x.node < n:
                    raise ValueError(f"input node {x.node} does not exist on this tape")
                parents.append((x.node, x.index))
                args.append(x.data)
            else:
                parents.append(None)
                args.append(x)
        outs = result_data if isinstance(result_data, tuple) else (result_data,)
        self.nodes.append(_Node(kind, tuple(parents), tuple(args), attrs or {}, outs))
        if len(outs) == 1:
            return Value(outs[0], self, n)
        return tuple(Value(o, self, n, k) for k, o in enumerate(outs))


def is_value(x) -> bool:
    return isinstance(x, Value)


def data_of(x):
    return x.data if isinstance(x, Value) else x


def apply(kind: str, *args, **attrs):
    """Run operation ``kind`` on ``args``; record it if any arg is a Value."""
    op = _OPS[kind]
    tape = None
    raw = []
    for a in args:
        if isinstance(a, Value):
            tape = a.tape
            raw.append(a.data)
        else:
            raw.append(a)
    out = op.forward(*raw, **attrs)
    if tape is None:
        return out
    return tape.record(kind, args, out, attrs)


def _accumulate(grads: dict, node: int, index: int, n_out: int, g) -> None:
    slot = grads.get(node)
    if slot is None:
        slot = [None] * n_out
        grads[node] = slot
    if slot[index] is None:
        slot[index] = g
    else:
        slot[index] = slot[index] + g


def backward(loss: Value) -> dict[str, np.ndarray]:
    """Reverse sweep from a scalar ``loss``.

    Returns a map from parameter name to gradient for every parameter on the
    tape (parameters the loss does not depend on get exact zeros). The tape is
    frozen afterwards and intermediate activations are released.
    """
    if not isinstance(loss, Value):
        return {}
    if loss.data.size != 1:
        raise NonScalarLossError(f"loss must be scalar, got shape {loss.data.shape}")
    tape = loss.tape
    if tape.frozen:
        raise FrozenTapeError("backward already ran on this tape")
    tape.frozen = True
    nodes = tape.nodes
    grads: dict[int, list] = {}
    root = nodes[loss.node]
    _accumulate(grads, loss.node, loss.index, len(root.outs), np.ones_like(loss.data))
    for i in range(loss.node, -1, -1):
        node = nodes[i]
        gouts = grads.get(i)
        if node.param is not None:
            continue
        node_args = node.args
        node.args = ()
        if gouts is None:
            continue
        del grads[i]
        parents = node.parents
        needs = tuple(p is not None for p in parents)
        if not any(needs):
            continue
        op = _OPS[node.kind]
        gin = op.vjp(gouts, node.outs, node_args, node.attrs, needs)
        for p, g in zip(parents, gin):
            if p is None or g is None:
                continue
            pn, pi = p
            _accumulate(grads, pn, pi, len(nodes[pn].outs), g)
        node.outs = tuple(None for _ in node.outs) if node.kind != "param" else node.outs
    # free remaining forward data of non-parameter nodes
    for node in nodes:
        if node.param is None:
            node.args = ()
    result = {}
    for name, idx in tape.params.items():
        slot = grads.get(idx)
        g = slot[0] if slot is not None else None
        if g is None:
            g = np.zeros_like(nodes[idx].outs[0])
        else:
            g = np.asarray(g, dtype=np.float64).reshape(nodes[idx].outs[0].shape)
        grads[idx] = [g]
        result[name] = g
    tape.grads = {idx: grads[idx] for idx in tape.params.values()}
    return result


# --------------------------------------------------------------------------
# spike nonlinearity


@dataclass(frozen=True)
class SpikeFunctionConfig:
    """Threshold nonlinearity settings.

    ``hard`` is the Heaviside forward with an exponential surrogate derivative
    ``magnitude * exp(-|v - v_th| / scale)``; ``smooth`` replaces the forward
    by a logistic of width ``scale`` and uses its exact derivative. Smooth mode
    exists so finite differences can validate gradients; training runs hard.

    The default constants (magnitude 0.3, scale 0.25 for a unit threshold)
    are engineering choices, not fitted values.
    """

    mode: str = "hard"
    surrogate_scale: float = 0.25
    surrogate_magnitude: float = 0.3

    def __post_init__(self):
        if self.mode not in ("hard", "smooth"):
            raise ValueError(f"spike mode must be 'hard' or 'smooth', got {self.mode!r}")
        if not self.surrogate_scale > 0 or not self.surrogate_magnitude > 0:
            raise ValueError("surrogate scale and magnitude must be positive")


def _sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _spike_fwd(v, v_th, mode, scale, magnitude):
    if mode == "hard":
        return (v > v_th).astype(np.float64)
    return _sigmoid((v - v_th) / scale)


def _spike_vjp(gouts, outs, args, attrs, needs):
    (g,) = gouts
    v, v_th = args
    if attrs["mode"] == "hard":
        d = attrs["magnitude"] * np.exp(-np.abs(v - v_th) / attrs["scale"])
    else:
        s = outs[0]
        d = s * (1.0 - s) / attrs["scale"]
    return (g * d, None)


defop("spike", _spike_fwd, _spike_vjp)


def surrogate_spike(v, v_th: float, cfg: SpikeFunctionConfig):
    """Threshold ``v`` against ``v_th``: output is 1 iff ``v > v_th`` in hard mode."""
    return apply(
        "spike",
        v,
        float(v_th),
        mode=cfg.mode,
        scale=cfg.surrogate_scale,
        magnitude=cfg.surrogate_magnitude,
    )


# --------------------------------------------------------------------------
# gradient verification


def finite_difference_check(
    program: Callable[[dict], object],
    params: dict[str, np.ndarray],
    eps: float = 1e-4,
    names: Iterable[str] | None = None,
) -> float:
    """Compare reverse-mode gradients of ``program`` against central differences.

    ``program(p)`` maps a dict of parameters (arrays or tape Values) to a
    scalar. Returns the largest element-wise relative error
    ``|fd - grad| / (|grad| + 1e-12)`` over the selected parameters.

    Only meaningful when the program uses smooth spikes; with hard spikes the
    surrogate is not the derivative of the forward pass and the check fails.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    f0 = float(data_of(program(params)))
    f1 = float(data_of(program(params)))
    if f0 != f1 and not (np.isnan(f0) and np.isnan(f1)):
        raise NonDeterministicProgramError(
            f"two identical forward passes disagree ({f0!r} vs {f1!r})"
        )
    tape = Tape()
    vals = {k: tape.parameter(k, v) for k, v in params.items()}
    grads = backward(program(vals))
    worst = 0.0
    for name in names if names is not None else params:
        p = params[name]
        g = grads[name]
        flat = p.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp = float(data_of(program(params)))
            flat[k] = orig - eps
            fm = float(data_of(program(params)))
            flat[k] = orig
            fd = (fp - fm) / (2.0 * eps)
            gk = g.reshape(-1)[k]
            err = abs(fd - gk) / (abs(gk) + 1e-12)
            worst = max(worst, err)
    return worst
