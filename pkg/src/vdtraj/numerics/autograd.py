"""Tape-based reverse-mode differentiation over numpy arrays.

Operations executed while a :class:`Tape` is active append a node to it when at
least one input requires a gradient.  :func:`backward` replays the tape in
reverse and returns a mapping from leaf tensors to gradient arrays, so the
parameters themselves are never mutated by a backward pass.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Iterable, Sequence

import numpy as np

from ..errors import DimensionError, NumericError, UsageError

DEFAULT_DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "is_leaf", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else
                         (data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE))
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# recording

class _Node:
    __slots__ = ("outputs", "inputs", "vjp")

    def __init__(self, outputs: tuple[Tensor, ...], inputs: tuple[Tensor, ...], vjp):
        self.outputs = outputs
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of the differentiable ops run inside ``with tape:``."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, node: _Node) -> None:
        self.nodes.append(node)
        for out in node.outputs:
            self._produced.add(id(out))

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._produced


_local = threading.local()


def _stack() -> list[Tape]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def no_record():
    """Temporarily suspend recording (e.g. for evaluation passes)."""
    saved = list(_stack())
    _stack().clear()
    try:
        yield
    finally:
        _stack().extend(saved)


def _emit(outputs: Sequence[np.ndarray], inputs: Sequence[Tensor], vjp) -> tuple[Tensor, ...]:
    outs = tuple(Tensor(o) for o in outputs)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        for o in outs:
            o.requires_grad = True
            o.is_leaf = False
        tape._push(_Node(outs, tuple(inputs), vjp))
    return outs


def _emit1(out: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    return _emit((out,), inputs, lambda g: vjp(g[0]))[0]


class Gradients(dict):
    """Gradient arrays keyed by the leaf :class:`Tensor` objects (identity keyed)."""

    def of(self, t: Tensor) -> np.ndarray:
        g = self.get(t)
        return np.zeros_like(t.data) if g is None else g


def backward(tape: Tape, output: Tensor, leaves: Iterable[Tensor] | None = None) -> Gradients:
    """Reverse-accumulate d(output)/d(leaf) over ``tape``.

    ``output`` must be a scalar recorded on ``tape`` (or a leaf itself).  When
    ``leaves`` is given, only those tensors appear in the result, zero-filled
    if the output does not depend on them.
    """
    if output.size != 1:
        raise UsageError(f"backward needs a scalar output, got shape {output.shape}")
    is_leaf = output.requires_grad and output.is_leaf
    if not tape.produced(output) and not is_leaf:
        raise UsageError("output was not produced by this tape")

    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    leaf_map: dict[int, Tensor] = {}
    if is_leaf:
        leaf_map[id(output)] = output

    for node in reversed(tape.nodes):
        gs = [grads.pop(id(o), None) for o in node.outputs]
        if all(g is None for g in gs):
            continue
        gs = [np.zeros_like(o.data) if g is None else g for o, g in zip(node.outputs, gs)]
        in_grads = node.vjp(gs)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if gi.shape != inp.data.shape:
                raise DimensionError(f"gradient shape {gi.shape} != input shape {inp.data.shape}")
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if inp.is_leaf:
                leaf_map[key] = inp

    result = Gradients()
    if leaves is None:
        for key, t in leaf_map.items():
            result[t] = grads.get(key, np.zeros_like(t.data))
    else:
        for t in leaves:
            g = grads.get(id(t))
            result[t] = np.zeros_like(t.data) if g is None else g
    return result


# --------------------------------------------------------------------------
# elementwise & structural ops

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit1(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit1(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit1(a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _emit1(out, (a, b),
                  lambda g: (_unbroadcast(g / b.data, a.shape),
                             _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit1(-a.data, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _emit1(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _emit1(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericError("log of a non-positive value")
    return _emit1(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _emit1(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form cannot overflow
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _emit1(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _emit1(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def clip(a, lo=None, hi=None) -> Tensor:
    """Clamp values; the gradient passes only where the value was not clamped."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi
    return _emit1(out, (a,), lambda g: (g * inside,))


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit1(np.asarray(out), (a,), vjp)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _emit1(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _emit1(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, np.integer)) or p is Ellipsis or p is None for p in parts)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    basic = _is_basic(index)

    def vjp(g):
        out = np.zeros_like(a.data)
        if basic:
            out[index] += g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _emit1(a.data[index], (a,), vjp)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(ts)))

    return _emit1(np.concatenate([t.data for t in ts], axis=axis), ts, vjp)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _emit1(np.stack([t.data for t in ts], axis=axis), ts, vjp)


def gather_rows(a, index: np.ndarray) -> Tensor:
    """Rows ``a[index]`` of a 2-D tensor; entries of ``index`` equal to -1 yield zero rows."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    valid = index >= 0
    safe = np.where(valid, index, 0)
    out = a.data[safe] * valid[:, None]

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, safe[valid], g[valid])
        return (ga,)

    return _emit1(out, (a,), vjp)


def logsumexp(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    s = np.sum(np.exp(a.data - m), axis=axis, keepdims=True)
    out = (m + np.log(s)).squeeze(axis)
    soft = np.exp(a.data - m) / s

    def vjp(g):
        return (np.expand_dims(g, axis) * soft,)

    return _emit1(out, (a,), vjp)


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values in {what}")
    return t


def parameters_to_vector(params: Iterable[Tensor]) -> np.ndarray:
    return np.concatenate([p.data.ravel() for p in params])


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner extents differ: {a.shape} x {b.shape}")
    return _emit1(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))

