"""Reverse-mode automatic differentiation over dense float64 arrays.

Values are `Tensor`s bound to a `Tape`.  Every primitive appends one record
(parent node ids plus one vector-Jacobian closure per parent) to the tape;
creation order is a topological order, so `backward` simply replays the
records in reverse.  Subgraphs built purely from constants record nothing,
which keeps tapes small when large data arrays flow through the graph.

Tensors are immutable by convention: nothing in this module writes to
`Tensor.data`, and callers must not either while a tape is alive.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigurationError, NumericError, ShapeError

Array = np.ndarray


def _as_array(value) -> Array:
    return np.asarray(value, dtype=np.float64)


class Tensor:
    """A dense float64 value tied to one node of a tape."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data: Array, tape: "Tape", node_id: int):
        self.data = data
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, node={self.node_id})"

    def __add__(self, other):
        return add(self, _coerce(self.tape, other))

    def __radd__(self, other):
        return add(_coerce(self.tape, other), self)

    def __sub__(self, other):
        return sub(self, _coerce(self.tape, other))

    def __rsub__(self, other):
        return sub(_coerce(self.tape, other), self)

    def __mul__(self, other):
        return mul(self, _coerce(self.tape, other))

    def __rmul__(self, other):
        return mul(_coerce(self.tape, other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _coerce(self.tape, other))

    def __getitem__(self, key):
        return slice_(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


class Tape:
    """Ordered record of primitive operations plus a parameter registry.

    A tape is confined to a single training step; tensors from different
    tapes cannot be mixed.  The registry maps names to node ids and shapes
    rather than Tensors, so a tape never references its own tensors: once
    the caller drops them, the whole recording frees by reference counting
    alone (no cycles for the garbage collector to chase).
    """

    def __init__(self):
        self._parents: list[tuple] = []
        self._vjps: list[tuple] = []
        self._requires: list[bool] = []
        self.params: dict[str, tuple[int, tuple]] = {}  # name -> (node_id, shape)

    @property
    def n_nodes(self) -> int:
        return len(self._parents)

    def _node(self, data: Array, parents: tuple = (), vjps: tuple = (),
              force_requires: bool = False) -> Tensor:
        requires = force_requires or any(self._requires[p] for p in parents)
        if not requires:
            parents, vjps = (), ()
        self._parents.append(parents)
        self._vjps.append(vjps)
        self._requires.append(requires)
        return Tensor(data, self, len(self._parents) - 1)

    def constant(self, value) -> Tensor:
        """Wrap a value that never needs a gradient."""
        return self._node(_as_array(value))

    def param(self, name: str, value) -> Tensor:
        """Register a named trainable leaf."""
        if name in self.params:
            raise ConfigurationError(f"parameter {name!r} registered twice on one tape")
        t = self._node(_as_array(value), force_requires=True)
        self.params[name] = (t.node_id, t.data.shape)
        return t


def _coerce(tape: Tape, value) -> Tensor:
    if isinstance(value, Tensor):
        if value.tape is not tape:
            raise ConfigurationError("cannot mix tensors from different tapes")
        return value
    return tape.constant(value)


def _same_tape(a: Tensor, b: Tensor) -> Tape:
    if a.tape is not b.tape:
        raise ConfigurationError("cannot mix tensors from different tapes")
    return a.tape


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --------------------------------------------------------------------------
# scatter/gather plans: precomputed sort-based segment sums, so repeated
# graph ops avoid np.add.at (which is slow) in both directions.

@dataclass
class ScatterPlan:
    """Reusable recipe turning per-edge rows into per-node sums."""

    idx: Array
    n_rows: int
    perm: Array
    starts: Array
    targets: Array

    @staticmethod
    def build(idx, n_rows: int) -> "ScatterPlan":
        idx = np.asarray(idx, dtype=np.int64)
        if idx.ndim != 1:
            raise ShapeError(f"scatter_add_rows: index must be 1-d, got {idx.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
            raise ShapeError("scatter_add_rows: index out of range")
        perm = np.argsort(idx, kind="stable")
        sorted_idx = idx[perm]
        starts = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])
        targets = sorted_idx[starts] if sorted_idx.size else sorted_idx
        return ScatterPlan(idx, n_rows, perm, starts, targets)

    def apply(self, rows: Array) -> Array:
        out = np.zeros((self.n_rows,) + rows.shape[1:], dtype=np.float64)
        if self.idx.size:
            segs = np.add.reduceat(rows[self.perm], self.starts, axis=0)
            out[self.targets] = segs
        return out


# --------------------------------------------------------------------------
# primitives

def add(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    data = a.data + b.data
    return tape._node(data, (a.node_id, b.node_id),
                      (lambda g: _unbroadcast(g, a.data.shape),
                       lambda g: _unbroadcast(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    data = a.data - b.data
    return tape._node(data, (a.node_id, b.node_id),
                      (lambda g: _unbroadcast(g, a.data.shape),
                       lambda g: _unbroadcast(-g, b.data.shape)))


def neg(a: Tensor) -> Tensor:
    return a.tape._node(-a.data, (a.node_id,), (lambda g: -g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    data = a.data * b.data
    return tape._node(data, (a.node_id, b.node_id),
                      (lambda g: _unbroadcast(g * b.data, a.data.shape),
                       lambda g: _unbroadcast(g * a.data, b.data.shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected 2-d operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.data.shape} by {b.data.shape}")
    data = a.data @ b.data
    return tape._node(data, (a.node_id, b.node_id),
                      (lambda g: g @ b.data.T,
                       lambda g: a.data.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected a 2-d operand, got {a.data.shape}")
    return a.tape._node(a.data.T.copy(), (a.node_id,), (lambda g: g.T,))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat: need at least one tensor")
    tape = parts[0].tape
    for p in parts[1:]:
        _same_tape(parts[0], p)
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as err:
        raise ShapeError(f"concat: {err}") from None
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]
        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]
        return vjp

    return tape._node(data, tuple(p.node_id for p in parts),
                      tuple(make_vjp(i) for i in range(len(parts))))


def reshape(a: Tensor, shape) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.data.shape} to {shape}") from None
    old_shape = a.data.shape
    return a.tape._node(data, (a.node_id,), (lambda g: g.reshape(old_shape),))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy() if not keepdims else np.broadcast_to(g, shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, shape).copy()

    return a.tape._node(data, (a.node_id,), (vjp,))


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.data.shape
    count = a.data.size if axis is None else shape[axis]

    def vjp(g):
        if axis is None:
            gg = g
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, shape).copy() / count

    return a.tape._node(data, (a.node_id,), (vjp,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return s * (g - (g * s).sum(axis=axis, keepdims=True))

    return a.tape._node(s, (a.node_id,), (vjp,))


def relu(a: Tensor) -> Tensor:
    # subgradient at 0 defined as 0
    mask = a.data > 0.0
    return a.tape._node(np.where(mask, a.data, 0.0), (a.node_id,),
                        (lambda g: g * mask,))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return a.tape._node(t, (a.node_id,), (lambda g: g * (1.0 - t * t),))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    if not np.all(np.isfinite(e)):
        raise NumericError("exp: overflow to non-finite values")
    return a.tape._node(e, (a.node_id,), (lambda g: g * e,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise NumericError("log: non-positive input")
    return a.tape._node(np.log(a.data), (a.node_id,), (lambda g: g / a.data,))


def softplus(a: Tensor) -> Tensor:
    data = np.logaddexp(0.0, a.data)
    sig = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return a.tape._node(data, (a.node_id,), (lambda g: g * sig,))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise NumericError("sqrt: requires strictly positive input")
    r = np.sqrt(a.data)
    return a.tape._node(r, (a.node_id,), (lambda g: g * (0.5 / r),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    try:
        data = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {a.data.shape} to {shape}") from None
    src_shape = a.data.shape
    return a.tape._node(data, (a.node_id,),
                        (lambda g: _unbroadcast(g, src_shape),))


def slice_(a: Tensor, key) -> Tensor:
    data = a.data[key]
    if np.isscalar(data) or data.ndim == 0:
        data = np.asarray(data, dtype=np.float64)
    else:
        data = data.copy()
    shape = a.data.shape

    def vjp(g):
        out = np.zeros(shape, dtype=np.float64)
        out[key] = g
        return out

    return a.tape._node(data, (a.node_id,), (vjp,))


def gather_rows(a: Tensor, idx, back_plan: ScatterPlan | None = None) -> Tensor:
    """Select rows `a[idx]`; the gradient scatter-adds back into `a`."""
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows: expected a 2-d operand, got {a.data.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    n_rows = a.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise ShapeError("gather_rows: index out of range")
    data = a.data[idx]
    plan = back_plan

    def vjp(g):
        nonlocal plan
        if plan is None:
            plan = ScatterPlan.build(idx, n_rows)
        return plan.apply(g)

    return a.tape._node(data, (a.node_id,), (vjp,))


def scatter_add_rows(a: Tensor, idx, n_rows: int,
                     plan: ScatterPlan | None = None) -> Tensor:
    """Sum rows of `a` into `n_rows` buckets given by `idx`."""
    if a.data.ndim != 2:
        raise ShapeError(f"scatter_add_rows: expected a 2-d operand, got {a.data.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape[0] != a.data.shape[0]:
        raise ShapeError(
            f"scatter_add_rows: {idx.shape[0]} indices for {a.data.shape[0]} rows")
    if plan is None:
        plan = ScatterPlan.build(idx, n_rows)
    data = plan.apply(a.data)
    return a.tape._node(data, (a.node_id,), (lambda g: g[idx],))


# --------------------------------------------------------------------------
# recording and differentiation entry points

def record_and_eval(expr: Callable[..., Tensor], *inputs) -> tuple[Tensor, Tape]:
    """Evaluate `expr` on a fresh tape with inputs bound as parameters x0, x1, ..."""
    tape = Tape()
    bound = [tape.param(f"x{i}", x) for i, x in enumerate(inputs)]
    out = expr(*bound)
    if not isinstance(out, Tensor):
        raise ConfigurationError("expression must return a Tensor")
    return out, tape


def backward(tape: Tape, loss: Tensor) -> dict[str, Array]:
    """Gradient of a scalar loss for every registered parameter.

    Unused parameters get zero tensors of their own shape.
    """
    if not isinstance(loss, Tensor) or loss.tape is not tape:
        raise ConfigurationError("loss is not a tensor on this tape")
    if loss.data.size != 1:
        raise ConfigurationError(f"loss must be scalar, got shape {loss.data.shape}")

    param_ids = {nid for nid, _ in tape.params.values()}
    grads: list[Array | None] = [None] * tape.n_nodes
    grads[loss.node_id] = np.ones_like(loss.data)
    for nid in range(loss.node_id, -1, -1):
        g = grads[nid]
        if g is None:
            continue
        for pid, vjp in zip(tape._parents[nid], tape._vjps[nid]):
            if not tape._requires[pid]:
                continue
            contrib = vjp(g)
            if grads[pid] is None:
                grads[pid] = np.asarray(contrib, dtype=np.float64)
            else:
                grads[pid] = grads[pid] + contrib
        if nid not in param_ids:
            grads[nid] = None  # free intermediate buffers early

    out: dict[str, Array] = {}
    for name, (nid, shape) in tape.params.items():
        g = grads[nid]
        if g is None:
            g = np.zeros(shape, dtype=np.float64)
        out[name] = np.asarray(g, dtype=np.float64).reshape(shape)
    return out
