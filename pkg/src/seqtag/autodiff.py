"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a numpy array. Every derived tensor records its parent
tensors and a closure that pushes the output adjoint back to them (a
dynamic tape). ``backward()`` on a scalar loss replays the closures in
reverse topological order, accumulating adjoints over all paths.

Conventions:
  * everything is float64, row-major;
  * any operation producing a non-finite value raises ``NumericError``;
  * parameters are leaf tensors created with ``parameter()``; their
    ``grad`` persists across graphs and must be reset by the caller;
  * dropout is a plain multiplication with a precomputed mask, so it
    needs no dedicated op.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from seqtag.exceptions import NumericError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording, e.g. for prediction passes."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by op '{op}'")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_backward_run")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "leaf")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._backward_run = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.data.shape})"

    # -- graph bookkeeping -------------------------------------------------

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Run reverse-mode accumulation from this scalar node."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.data.shape}")
        if self._backward_run:
            raise NumericError("repeated backward on the same loss without rebuilding the graph")
        self._backward_run = True

        order = _toposort(self)
        self._accum(np.ones_like(self.data))
        for node in reversed(order):
            g = node.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite adjoint at op '{node.op}'")
            if node._backward is not None:
                node._backward(g)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("tensor/tensor division is not part of the op set")
        return mul(self, 1.0 / float(other))

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)


def parameter(data, name: str | None = None) -> Tensor:
    """A trainable leaf tensor."""
    t = Tensor(data, requires_grad=True)
    t.op = name or "param"
    return t


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _toposort(root: Tensor) -> list[Tensor]:
    # Iterative post-order DFS; recursion would overflow on long sequences.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _make(data: np.ndarray, parents: Iterable[Tensor], backward: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    parents = tuple(p for p in parents if p.requires_grad)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out._backward_run = False
    if _GRAD_ENABLED and parents:
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Collapse the adjoint of a broadcast result back onto `shape`.
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- arithmetic --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as err:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from err

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as err:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from err

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward, "mul")


def power(a, exponent) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)
    data = a.data ** exponent

    def backward(g):
        if a.requires_grad:
            a._accum(g * exponent * a.data ** (exponent - 1.0))

    return _make(data, (a,), backward, "pow")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _make(data, (a, b), backward, "matmul")


# -- elementwise nonlinearities ----------------------------------------------


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh-based form saturates instead of overflowing exp()
    data = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def backward(g):
        if a.requires_grad:
            a._accum(g * data * (1.0 - data))

    return _make(data, (a,), backward, "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    data = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum(g * (1.0 - data * data))

    return _make(data, (a,), backward, "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            a._accum(g * (a.data > 0.0))

    return _make(data, (a,), backward, "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum(g * data)

    return _make(data, (a,), backward, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum(g / a.data)

    return _make(data, (a,), backward, "log")


# -- structural ops -----------------------------------------------------------


def getitem(a: Tensor, key) -> Tensor:
    if isinstance(key, tuple):
        key = tuple(np.asarray(k) if isinstance(k, (list, np.ndarray)) else k for k in key)
    elif isinstance(key, (list, np.ndarray)):
        key = np.asarray(key)
    data = a.data[key]
    advanced = _has_index_arrays(key)

    def backward(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        if advanced:
            np.add.at(a.grad, key, g)
        else:
            a.grad[key] += g

    return _make(np.array(data, dtype=np.float64), (a,), backward, "getitem")


def _has_index_arrays(key) -> bool:
    if isinstance(key, np.ndarray):
        return True
    if isinstance(key, tuple):
        return any(isinstance(k, np.ndarray) for k in key)
    return False


def reshape(a: Tensor, shape) -> Tensor:
    original = a.data.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as err:
        raise ShapeError(f"cannot reshape {original} to {shape}") from err

    def backward(g):
        if a.requires_grad:
            a._accum(g.reshape(original))

    return _make(data, (a,), backward, "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of zero tensors")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as err:
        raise ShapeError("concat: incompatible shapes") from err
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, offsets, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accum(piece)

    return _make(data, tensors, backward, "concat")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accum(np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accum(np.broadcast_to(gg, a.data.shape).copy())

    return _make(np.asarray(data, dtype=np.float64), (a,), backward, "sum")


def tmean(a: Tensor, axis=None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis), 1.0 / count)


def logsumexp(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """log(sum(exp(a))) with the max-subtraction trick."""
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    data_keep = m + np.log(total)
    soft = shifted / total  # softmax(a) along axis, keepdims layout
    if keepdims:
        data = data_keep
    elif axis is None:
        data = data_keep.reshape(())
    else:
        data = np.squeeze(data_keep, axis=axis)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accum(soft * g)
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accum(soft * gg)

    return _make(np.asarray(data, dtype=np.float64), (a,), backward, "logsumexp")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            inner = (g * data).sum(axis=axis, keepdims=True)
            a._accum(data * (g - inner))

    return _make(data, (a,), backward, "softmax")


# -- verification --------------------------------------------------------------


def check_gradients(build_loss: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    ``build_loss`` must rebuild the graph from the current parameter data
    each call. Returns the maximum relative error
    ``|a - n| / max(|a|, |n|, 1e-8)`` over all parameter components.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for p in params:
        p.grad = None
    loss = build_loss()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.ravel()
        ana_flat = ana.ravel()
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            f_plus = float(build_loss().data)
            flat[i] = saved - eps
            f_minus = float(build_loss().data)
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(ana_flat[i] - numeric) / max(abs(ana_flat[i]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
