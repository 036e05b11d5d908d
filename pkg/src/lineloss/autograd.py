"""Dense float64 arrays with define-by-run reverse-mode differentiation.

Every operation that touches a tensor with ``requires_grad`` appends one node to
the active :class:`Tape`. :func:`backward` walks that tape in reverse recording
order, so each node is visited exactly once and fan-out gradients add up.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

__all__ = [
    "Tensor", "Tape", "tensor", "as_tensor", "tape", "no_grad", "current_tape",
    "add", "sub", "mul", "div", "neg", "matmul", "tanh", "sigmoid", "relu", "exp",
    "elementwise", "softmax_axis", "reduce_sum", "reduce_mean", "reshape",
    "transpose", "concat", "stack", "take", "backward", "gradient_check",
]


class _Node:
    __slots__ = ("out", "parents", "fn", "index", "tape")

    def __init__(self, out, parents, fn, index, tape):
        self.out = out
        self.parents = parents
        self.fn = fn
        self.index = index
        self.tape = tape


class Tape:
    """Append-only record of operations; recording order is a topological order."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self):
        return len(self.nodes)

    def record(self, out: "Tensor", parents, fn) -> None:
        node = _Node(out, parents, fn, len(self.nodes), self)
        self.nodes.append(node)
        out._node = node

    def clear(self) -> None:
        self.nodes = []


_state = threading.local()


def _stack() -> list:
    if not hasattr(_state, "tapes"):
        _state.tapes = [Tape()]
        _state.grad_enabled = True
    return _state.tapes


def current_tape() -> Tape:
    return _stack()[-1]


def _grad_enabled() -> bool:
    _stack()
    return _state.grad_enabled


@contextmanager
def tape():
    """Record into a fresh tape for the duration of the block."""
    stack = _stack()
    t = Tape()
    stack.append(t)
    try:
        yield t
    finally:
        stack.pop()


@contextmanager
def no_grad():
    _stack()
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim and 0 in arr.shape:
            raise DimensionError(f"tensor axes must be positive, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None
        self.name = name

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
    def values(self) -> np.ndarray:
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, fn: Callable) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError("non-finite value produced by forward operation")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._node = None
    out.name = None
    out.requires_grad = _grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        current_tape().record(out, parents, fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"shapes {a.shape} and {b.shape} are not broadcastable") from None


# -- binary pointwise ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / b.data ** 2, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch axes differ: {a.shape} x {b.shape}") from None

    def fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), fn)


# -- unary pointwise ----------------------------------------------------------

def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # tanh form is stable at both tails
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


_ELEMENTWISE = {
    "tanh": tanh, "sigmoid": sigmoid, "relu": relu, "exp": exp,
    "add": add, "mul": mul, "sub": sub, "div": div,
}


def elementwise(op: str, *args) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# -- axis operations ----------------------------------------------------------

def _axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for rank {x.ndim}")
    return axis % x.ndim


def softmax_axis(x, axis: int) -> Tensor:
    x = as_tensor(x)
    axis = _axis(x, axis)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), fn)


def reduce_sum(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is not None:
        axis = _axis(x, axis)
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=np.float64)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), fn)


def reduce_mean(x, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is not None:
        axis = _axis(x, axis)
    n = x.size if axis is None else x.shape[axis]
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims), dtype=np.float64)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _make(out, (x,), fn)


def reshape(x, new_shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    new_shape = tuple(int(n) for n in new_shape)
    if -1 not in new_shape and int(np.prod(new_shape)) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} to {new_shape}")
    try:
        out = x.data.reshape(new_shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} to {new_shape}") from None
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def concat(xs: Sequence, axis: int) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    if not xs:
        raise DimensionError("concat of empty list")
    axis = _axis(xs[0], axis)
    ref = xs[0].shape
    for t in xs[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise DimensionError(f"concat shape mismatch: {ref} vs {t.shape} on axis {axis}")
    cuts = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def fn(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), fn)


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    if not xs or any(t.shape != xs[0].shape for t in xs):
        raise DimensionError("stack needs a nonempty list of equal shapes")
    axis = axis % (xs[0].ndim + 1)
    n = len(xs)

    def fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _make(np.stack([t.data for t in xs], axis=axis), tuple(xs), fn)


def take(x, index) -> Tensor:
    """Basic (non-fancy) indexing; the gradient scatters back into zeros."""
    x = as_tensor(x)
    out = np.array(x.data[index], dtype=np.float64)

    def fn(g):
        full = np.zeros_like(x.data)
        full[index] += g
        return (full,)

    return _make(out, (x,), fn)


# -- reverse pass ---------------------------------------------------------------

def backward(output: Tensor, retain: bool = False) -> None:
    """Populate ``grad`` on every ``requires_grad`` leaf feeding ``output``.

    The recording tape is cleared afterwards unless ``retain`` is set.
    """
    if output.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return
    seed = np.ones_like(output.data)
    node = output._node
    if node is None:
        output.grad = seed if output.grad is None else output.grad + seed
        return
    t = node.tape
    if node.index >= len(t.nodes) or t.nodes[node.index] is not node:
        raise ContractError("output's tape was already consumed by an earlier backward()")
    output.grad = seed
    for nd in reversed(t.nodes[: node.index + 1]):
        g = nd.out.grad
        if g is None:
            continue
        grads = nd.fn(g)
        for p, pg in zip(nd.parents, grads):
            if pg is None or not p.requires_grad:
                continue
            p.grad = pg.copy() if p.grad is None else p.grad + pg
        if not retain:
            nd.out.grad = None
    if not retain:
        t.clear()


def gradient_check(f: Callable, x, eps: float = 1e-5) -> float:
    """Max relative error between backward() and central differences.

    ``x`` may be a tensor or a sequence of tensors; all of them are perturbed.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    saved = [t.requires_grad for t in xs]
    for t in xs:
        t.requires_grad = True
        t.grad = None
    with tape():
        y = f(*xs) if not isinstance(x, Tensor) else f(x)
        y = as_tensor(y)
        backward(y)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in xs]
    worst = 0.0
    with no_grad():
        for t, a in zip(xs, analytic):
            flat = t.data.reshape(-1)
            af = a.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = as_tensor(f(*xs) if not isinstance(x, Tensor) else f(x)).item()
                flat[i] = orig - eps
                fm = as_tensor(f(*xs) if not isinstance(x, Tensor) else f(x)).item()
                flat[i] = orig
                num = (fp - fm) / (2.0 * eps)
                err = abs(af[i] - num) / max(1e-8, abs(af[i]) + abs(num))
                worst = max(worst, err)
    for t, r in zip(xs, saved):
        t.requires_grad = r
    return worst
