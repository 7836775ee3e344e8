"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every value is a `Tensor` node in an implicit acyclic graph. Leaves carry a
`trainable` flag; `backward` walks the graph once in reverse topological
order and returns gradients for trainable leaves only. Frozen leaves still
propagate gradients through the ops that consume them, they just never
accumulate a stored gradient of their own.

Only the operations the forecasting pipeline needs are provided; there is no
general broadcasting beyond bias-style row addition.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

from .errors import ContractError, NonFiniteError, ShapeError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph construction (evaluation-only forward passes)."""
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _as_f64(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)  # ascontiguousarray would promote 0-d to 1-d
    return arr


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by '{op}'")


class Tensor:
    """Graph node: a float64 array plus the op that produced it."""

    __slots__ = ("data", "grad", "trainable", "name", "_parents", "_backward")

    def __init__(self, data, trainable=False, name=None, _parents=(), _backward=None):
        self.data = _as_f64(data)
        _check_finite(self.data, name or "leaf")
        self.grad = None
        self.trainable = bool(trainable)
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        tag = self.name or ("op" if self._parents else "leaf")
        return f"Tensor({tag}, shape={self.data.shape}, trainable={self.trainable})"


def leaf(data, trainable=False, name=None) -> Tensor:
    return Tensor(data, trainable=trainable, name=name)


def const(data) -> Tensor:
    return Tensor(data)


def _node(data, parents, backward, op: str) -> Tensor:
    # fast-path constructor: ops guarantee float64 output, check finiteness once
    data = np.asarray(data)
    _check_finite(data, op)
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.trainable = False
    t.name = None
    if grad_enabled():
        t._parents = tuple(parents)
        t._backward = backward
    else:
        t._parents = ()
        t._backward = None
    return t


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _node(out, (a, b), backward, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape == b.data.shape:
        def backward(g):
            return g, g

        return _node(a.data + b.data, (a, b), backward, "add")
    # bias form: (..., n) + (n,)
    if b.data.ndim == 1 and a.data.ndim >= 1 and a.data.shape[-1] == b.data.shape[0]:
        def backward(g):
            return g, g.reshape(-1, b.data.shape[0]).sum(axis=0)

        return _node(a.data + b.data, (a, b), backward, "add")
    raise ShapeError(f"add: {a.data.shape} + {b.data.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: {a.data.shape} - {b.data.shape}")

    def backward(g):
        return g, -g

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: {a.data.shape} * {b.data.shape}")

    def backward(g):
        return g * b.data, g * a.data

    return _node(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(g):
        return (g * s,)

    return _node(a.data * s, (a,), backward, "scale")


def shift(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        return (g,)

    return _node(a.data + c, (a,), backward, "shift")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {a.data.shape}")

    def backward(g):
        return (g.T,)

    return _node(a.data.T.copy(), (a,), backward, "transpose")


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise ShapeError(f"permute: axes {axes} invalid for shape {a.data.shape}")
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return _node(np.transpose(a.data, axes).copy(), (a,), backward, "permute")


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over a shared leading axis: (B,m,k) @ (B,k,n)."""
    if (a.data.ndim != 3 or b.data.ndim != 3
            or a.data.shape[0] != b.data.shape[0]
            or a.data.shape[2] != b.data.shape[1]):
        raise ShapeError(f"bmm: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.transpose(0, 2, 1), a.data.transpose(0, 2, 1) @ g

    return _node(out, (a, b), backward, "bmm")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _node(out, tensors, backward, "concat")


def gather_rows(a: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("gather_rows expects a 1-d index list")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {a.data.shape}")
    out = a.data[idx].copy()

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)  # scatter-add: repeated indices accumulate
        return (ga,)

    return _node(out, (a,), backward, "gather_rows")


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.data.shape),)

    return _node(out.copy(), (a,), backward, "reshape")


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.full_like(a.data, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy(),)

    return _node(out, (a,), backward, "reduce_sum")


def reduce_mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    out = a.data.mean(axis=axis)

    def backward(g):
        if axis is None:
            return (np.full_like(a.data, float(g) / n),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape) / n,)

    return _node(out, (a,), backward, "reduce_mean")


def gelu(a: Tensor) -> Tensor:
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (cdf + x * pdf),)

    return _node(out, (a,), backward, "gelu")


def softmax(a: Tensor, axis: int) -> Tensor:
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.data.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _node(out, (a,), backward, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    n = x.data.shape[-1]
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise ShapeError("layer_norm: gain/bias must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        dxhat = g * gain.data
        dgain = (g * xhat).reshape(-1, n).sum(axis=0)
        dbias = g.reshape(-1, n).sum(axis=0)
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgain, dbias

    return _node(out, (x, gain, bias), backward, "layer_norm")


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order  # parents before children


def backward(loss: Tensor, wrt=None) -> dict:
    """Accumulate d(loss)/d(leaf) for every trainable leaf.

    Returns a map Tensor -> ndarray covering trainable leaves reached by the
    graph plus any extra nodes listed in `wrt` (useful for inspecting
    gradients at internal nodes). Also stores `.grad` on trainable leaves;
    non-trainable leaves keep `.grad is None`.
    """
    if loss.data.shape != ():
        raise ContractError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    wrt = list(wrt) if wrt else []
    wrt_ids = {id(w) for w in wrt}
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    captured: dict[int, np.ndarray] = {}
    by_id: dict[int, Tensor] = {}
    for node in reversed(order):  # each node visited exactly once
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.trainable or id(node) in wrt_ids:
            captured[id(node)] = np.array(g, dtype=np.float64)
            by_id[id(node)] = node
        if node._backward is None:
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg

    result = {}
    for nid, g in captured.items():
        node = by_id[nid]
        if node.trainable:
            node.grad = g
        result[node] = g
    for w in wrt:
        result.setdefault(w, np.zeros_like(w.data))
    return result
