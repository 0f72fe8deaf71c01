"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation runs eagerly on numpy arrays. While a :class:`Tape` is
active, operations whose inputs require gradients are appended to it in
execution order, which is all the backward pass needs: walking the record
in reverse is already a valid topological order.

Broadcasting is deliberately narrow. Two operands must have equal shapes,
or one of them must be a scalar, or the smaller shape must equal the
trailing part of the larger one (a leading batch dimension).
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, log_expit

__all__ = [
    "NonFiniteError",
    "ShapeError",
    "Tape",
    "Tensor",
    "as_tensor",
    "gradient",
    "numerical_gradient",
    "add", "sub", "mul", "div", "neg", "square", "exp", "log", "sqrt",
    "sigmoid", "log_sigmoid", "softplus", "tanh", "relu", "hardtanh", "clamp",
    "matmul", "transpose", "reshape", "sum", "mean", "concat", "index",
    "log_softmax", "softmax", "logsumexp",
]


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or infinity."""


class ShapeError(ValueError):
    """Operand shapes do not conform."""


# Each thread records onto its own stack of tapes.
_LOCAL = threading.local()


def _tapes() -> list["Tape"]:
    if not hasattr(_LOCAL, "tapes"):
        _LOCAL.tapes = []
    return _LOCAL.tapes


@dataclass
class _Node:
    op: str
    forward: Callable[..., np.ndarray]
    inputs: tuple["Tensor", ...]
    output: "Tensor"
    vjp: Callable


class Tape:
    """Ordered record of the differentiable operations run while active.

    Usage::

        with Tape() as tape:
            loss = (x * x).sum()
        (dx,) = tape.gradient(loss, [x])
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tapes().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tapes().remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def gradient(self, loss: "Tensor", params: Sequence["Tensor"]) -> list[np.ndarray]:
        if loss.data.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
        end = None
        for k in range(len(self.nodes) - 1, -1, -1):
            if self.nodes[k].output is loss:
                end = k
                break
        used = {id(t) for node in self.nodes for t in node.inputs}
        for p in params:
            if not p.requires_grad or (id(p) not in used and p is not loss):
                raise ValueError(f"parameter {p.name or p.shape} is not on the tape")
        if end is None and not any(p is loss for p in params):
            raise ValueError("loss was not produced on this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        recorded = self.nodes[: end + 1] if end is not None else []
        for node in reversed(recorded):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            need = tuple(t.requires_grad for t in node.inputs)
            in_grads = node.vjp(g, need, node.output.data, *[t.data for t in node.inputs])
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if not np.all(np.isfinite(gi)):
                    raise NonFiniteError(f"{node.op} (backward) produced non-finite values")
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return [np.asarray(grads[id(p)], dtype=np.float64) if id(p) in grads else np.zeros_like(p.data)
                for p in params]

    def replay(self) -> None:
        """Recompute every recorded output from its inputs, in order.

        Raises AssertionError if any recomputed value differs from the
        recorded one in a single bit.
        """
        for node in self.nodes:
            again = node.forward(*[t.data for t in node.inputs])
            if not np.array_equal(again, node.output.data):
                raise AssertionError(f"replay of {node.op} diverged")


def _active() -> Tape | None:
    stack = _tapes()
    return stack[-1] if stack else None


class Tensor:
    """A float64 array plus the bookkeeping needed for differentiation."""

    __slots__ = ("data", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"tensor {name or ''} created with non-finite values")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def param(cls, data, name: str | None = None) -> "Tensor":
        return cls(np.array(data, dtype=np.float64), requires_grad=True, name=name)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __getitem__(self, key): return index(self, key)

    def __pow__(self, exponent):
        if exponent == 2:
            return square(self)
        raise NotImplementedError("only squaring is supported")

    def sum(self, axis: int | None = None) -> "Tensor":
        return sum(self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return mean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(op: str, forward, vjp, *inputs) -> Tensor:
    inputs = tuple(as_tensor(t) for t in inputs)
    out = forward(*[t.data for t in inputs])
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced non-finite values")
    result = Tensor.__new__(Tensor)
    result.data = np.asarray(out, dtype=np.float64)
    result.name = None
    result.requires_grad = False
    tape = _active()
    if tape is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        tape.nodes.append(_Node(op, forward, inputs, result, vjp))
    return result


# -- broadcasting -----------------------------------------------------------

def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or a.ndim == 0 or b.ndim == 0:
        return
    if a.ndim > b.ndim and sa[a.ndim - b.ndim:] == sb:
        return
    if b.ndim > a.ndim and sb[b.ndim - a.ndim:] == sa:
        return
    raise ShapeError(f"{op}: shapes {sa} and {sb} do not conform")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    return g.reshape((-1,) + shape).sum(axis=0)


# -- elementwise binary -----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.data, b.data)

    def vjp(g, need, out, x, y):
        return (_reduce_to(g, x.shape) if need[0] else None,
                _reduce_to(g, y.shape) if need[1] else None)
    return _apply("add", np.add, vjp, a, b)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.data, b.data)

    def vjp(g, need, out, x, y):
        return (_reduce_to(g, x.shape) if need[0] else None,
                _reduce_to(-g, y.shape) if need[1] else None)
    return _apply("sub", np.subtract, vjp, a, b)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.data, b.data)

    def vjp(g, need, out, x, y):
        return (_reduce_to(g * y, x.shape) if need[0] else None,
                _reduce_to(g * x, y.shape) if need[1] else None)
    return _apply("mul", np.multiply, vjp, a, b)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a.data, b.data)
    if np.any(b.data == 0):
        raise ZeroDivisionError("div: division by zero")

    def vjp(g, need, out, x, y):
        return (_reduce_to(g / y, x.shape) if need[0] else None,
                _reduce_to(-g * out / y, y.shape) if need[1] else None)
    return _apply("div", np.divide, vjp, a, b)


# -- elementwise unary ------------------------------------------------------

def neg(a) -> Tensor:
    return _apply("neg", np.negative, lambda g, need, out, x: (-g,), a)


def square(a) -> Tensor:
    return _apply("square", np.square, lambda g, need, out, x: (2.0 * x * g,), a)


def exp(a) -> Tensor:
    return _apply("exp", np.exp, lambda g, need, out, x: (g * out,), a)


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log: input must be positive")
    return _apply("log", np.log, lambda g, need, out, x: (g / x,), a)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise ValueError("sqrt: input must be non-negative")
    return _apply("sqrt", np.sqrt, lambda g, need, out, x: (0.5 * g / out,), a)


def sigmoid(a) -> Tensor:
    return _apply("sigmoid", expit, lambda g, need, out, x: (g * out * (1.0 - out),), a)


def log_sigmoid(a) -> Tensor:
    return _apply("log_sigmoid", log_expit, lambda g, need, out, x: (g * expit(-x),), a)


def _softplus(x):
    return np.logaddexp(0.0, x)


def softplus(a) -> Tensor:
    return _apply("softplus", _softplus, lambda g, need, out, x: (g * expit(x),), a)


def tanh(a) -> Tensor:
    return _apply("tanh", np.tanh, lambda g, need, out, x: (g * (1.0 - out * out),), a)


def relu(a) -> Tensor:
    return _apply("relu", lambda x: np.maximum(x, 0.0),
                  lambda g, need, out, x: (g * (x > 0),), a)


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to ``[lo, hi]``; the gradient is zero where clipping is active."""
    return _apply(f"clamp[{lo},{hi}]", lambda x: np.clip(x, lo, hi),
                  lambda g, need, out, x: (g * ((x >= lo) & (x <= hi)),), a)


def hardtanh(a) -> Tensor:
    return _apply("hardtanh", lambda x: np.clip(x, -1.0, 1.0),
                  lambda g, need, out, x: (g * ((x > -1.0) & (x < 1.0)),), a)


# -- linear algebra and shape -----------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product for 1-D and 2-D operands (``numpy.matmul`` semantics)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul: only 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")

    def vjp(g, need, out, x, y):
        gx = gy = None
        if need[0]:
            if y.ndim == 1:
                gx = np.multiply.outer(g, y)
            else:
                gx = g @ y.T
        if need[1]:
            if x.ndim == 1:
                gy = np.multiply.outer(x, g)
            else:
                gy = x.T @ g
        return gx, gy
    return _apply("matmul", np.matmul, vjp, a, b)


def transpose(a) -> Tensor:
    return _apply("transpose", np.transpose, lambda g, need, out, x: (g.T,), a)


def reshape(a, shape) -> Tensor:
    shape = tuple(shape)
    return _apply("reshape", lambda x: x.reshape(shape),
                  lambda g, need, out, x: (g.reshape(x.shape),), a)


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001
    def vjp(g, need, out, x):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)
    return _apply("sum", lambda x: np.sum(x, axis=axis), vjp, a)


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    if n == 0:
        raise ZeroDivisionError("mean of an empty tensor")
    return sum(a, axis) / float(n)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g, need, out, *xs):
        return tuple(np.split(g, cuts, axis=axis))
    return _apply("concat", lambda *xs: np.concatenate(xs, axis=axis), vjp, *tensors)


def index(a, key) -> Tensor:
    """Basic (slice/integer) indexing."""
    def vjp(g, need, out, x):
        full = np.zeros_like(x)
        full[key] = g
        return (full,)
    return _apply("index", lambda x: np.array(x[key]), vjp, a)


# -- normalisers -------------------------------------------------------------

def _logsumexp(x):
    m = np.max(x, axis=-1, keepdims=True)
    return (m + np.log(np.sum(np.exp(x - m), axis=-1, keepdims=True)))[..., 0]


def logsumexp(a) -> Tensor:
    """Log-sum-exp over the last axis."""
    def vjp(g, need, out, x):
        return (np.expand_dims(g, -1) * np.exp(x - np.expand_dims(out, -1)),)
    return _apply("logsumexp", _logsumexp, vjp, a)


def log_softmax(a) -> Tensor:
    def fwd(x):
        return x - _logsumexp(x)[..., None]

    def vjp(g, need, out, x):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)
    return _apply("log_softmax", fwd, vjp, a)


def softmax(a) -> Tensor:
    def fwd(x):
        e = np.exp(x - np.max(x, axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    def vjp(g, need, out, x):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)
    return _apply("softmax", fwd, vjp, a)


# -- convenience -------------------------------------------------------------

def gradient(loss: Tensor, params: Sequence[Tensor], tape: Tape | None = None) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. each of ``params``.

    Uses the innermost active tape unless one is given explicitly.
    """
    tape = tape or _active()
    if tape is None:
        raise ValueError("no active tape")
    return tape.gradient(loss, params)


def numerical_gradient(f: Callable[[], float], params: Sequence[Tensor],
                       step: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of ``f()`` w.r.t. the data of ``params``.

    ``f`` is called with parameter entries perturbed in place, so it must
    re-read the parameters (and reseed any randomness) on each call.
    """
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        flat, gflat = p.data.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = f()
            flat[k] = orig - step
            down = f()
            flat[k] = orig
            gflat[k] = (up - down) / (2.0 * step)
        out.append(g)
    return out
