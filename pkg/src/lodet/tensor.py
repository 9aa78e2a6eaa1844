"""Minimal dense tensor with reverse-mode autodiff on top of numpy.

Every op records a closure that maps the output gradient to gradients of its
inputs. ``backward`` walks the recorded graph in reverse topological order and
stores gradients only on leaves that require them, so frozen parameters never
receive one.
"""
from __future__ import annotations

import contextlib
import os
from typing import Callable, Iterable, Sequence

import numpy as np

DEBUG = os.environ.get("LODET_DEBUG", "") not in ("", "0")

_dtype = np.float32


class NumericError(FloatingPointError):
    pass


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype every op produces (used by the gradient checker)."""
    global _dtype
    prev, _dtype = _dtype, np.dtype(dtype).type
    try:
        yield
    finally:
        _dtype = prev


def current_dtype():
    return _dtype


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def relu(self) -> "Tensor":
        return relu(self)

    def backward(self) -> None:
        backward(self)


class Parameter(Tensor):
    """A named leaf tensor. ``trainable`` doubles as ``requires_grad``."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", trainable: bool = True):
        super().__init__(np.array(data, dtype=np.float32), requires_grad=trainable)
        self.name = name

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    @trainable.setter
    def trainable(self, flag: bool) -> None:
        self.requires_grad = bool(flag)
        if not flag:
            self.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {what}")


def _result(data, parents: Sequence[Tensor], backward_fn, name: str) -> Tensor:
    out = Tensor(data)
    if DEBUG:
        _check_finite(out.data, name)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                   "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _result(out, (a, b), bw, "div")


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data

    def bw(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _result(np.where(pick_a, a.data, b.data), (a, b), bw, "maximum")


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data

    def bw(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _result(np.where(pick_a, a.data, b.data), (a, b), bw, "minimum")


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def absolute(x) -> Tensor:
    x = as_tensor(x)
    return _result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 1.0 / (1.0 + np.exp(-x.data))
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# -- linear algebra and shape ops --------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    return _result(a.data @ b.data, (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def bmm(a, b) -> Tensor:
    """Batched matmul of [B, m, k] by [B, k, n]."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ValueError(f"bmm dimension mismatch: {a.shape} @ {b.shape}")
    return _result(np.matmul(a.data, b.data), (a, b),
                   lambda g: (np.matmul(g, b.data.transpose(0, 2, 1)),
                              np.matmul(a.data.transpose(0, 2, 1), g)), "bmm")


def transpose(x) -> Tensor:
    x = as_tensor(x)
    return _result(x.data.T, (x,), lambda g: (g.T,), "transpose")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (slice, int)) or i is None or i is Ellipsis for i in parts)

    def bw(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _result(x.data[idx], (x,), bw, "getitem")


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    splits = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _result(np.concatenate([x.data for x in xs], axis=axis), xs,
                   lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(x.data.sum(axis=axis, keepdims=keepdims), (x,), bw, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / float(n))


# -- normalisation and losses ---------------------------------------------------

def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    soft = np.exp(out)
    return _result(out, (x,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),),
                   "log_softmax")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), bw, "softmax")


def cross_entropy(logits, targets, weights=None) -> Tensor:
    """Weighted mean of -log softmax(logits)[target] over rows.

    With ``weights`` the mean is normalised by the weight sum.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n = logits.shape[0]
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        w = w / w.sum()
    lsm = log_softmax(logits, axis=1)
    picked = lsm[np.arange(n), targets]
    return -(picked * w.astype(_dtype)).sum()


def smooth_l1(x, beta: float = 1.0) -> Tensor:
    """Elementwise Huber-style loss of a residual ``x``; quadratic inside ``beta``."""
    x = as_tensor(x)
    ax = np.abs(x.data)
    inside = ax < beta
    out = np.where(inside, 0.5 * x.data ** 2 / beta, ax - 0.5 * beta)
    return _result(out, (x,), lambda g: (g * np.where(inside, x.data / beta, np.sign(x.data)),),
                   "smooth_l1")


# -- backward -------------------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf requiring grad."""
    if loss.size != 1 or loss.ndim > 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if DEBUG:
                _check_finite(g, "backward")
            node.grad = g.astype(node.data.dtype) if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6,
               dtype=np.float64) -> float:
    """Max relative error between backprop and central differences.

    ``f`` is re-evaluated from the current parameter values; evaluation happens in
    ``dtype`` (float64 by default) and parameter buffers are restored bitwise.
    Components smaller than the difference quotient can resolve (1e4 times its
    round-off level) are compared against that floor instead of their own size.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    saved = [p.data for p in params]
    try:
        with precision(dtype):
            for p in params:
                p.data = p.data.astype(dtype)
            zero_grad(params)
            loss = f()
            if not np.isfinite(loss.data).all():
                raise NumericError("f is not finite at the base point")
            backward(loss)
            analytic = [np.zeros(p.shape) if p.grad is None else p.grad.astype(np.float64)
                        for p in params]
            worst = 0.0
            unit = float(np.finfo(dtype).eps)
            for p, a in zip(params, analytic):
                flat = p.data.reshape(-1)
                af = a.reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + eps
                    fp = float(f().data)
                    flat[i] = orig - eps
                    fm = float(f().data)
                    flat[i] = orig
                    if not (np.isfinite(fp) and np.isfinite(fm)):
                        raise NumericError("f evaluation became non-finite")
                    num = (fp - fm) / (2 * eps)
                    floor = max(1e4 * unit * max(abs(fp), abs(fm)) / eps, 1e-12)
                    err = abs(af[i] - num) / max(abs(af[i]), abs(num), floor)
                    worst = max(worst, err)
    finally:
        for p, d in zip(params, saved):
            p.data = d
            p.grad = None
    return worst
