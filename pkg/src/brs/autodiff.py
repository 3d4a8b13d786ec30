"""Reverse-mode automatic differentiation over numpy arrays.

A deliberately small tape: only the primitives the package's models need
(dense layers, tanh/relu/sigmoid, softmax log-probs, GRU cells are composed
from these, Huber, stop_gradient, a linear solve for the exact-value work).
Everything is float64. Graphs are built eagerly; ``gradients`` walks them
iteratively so deep rollout graphs do not hit the recursion limit, and it
keeps no global state, so the same graph can be differentiated repeatedly.

Most forward helpers (``tanh``, ``sigmoid``, ``concat``, ...) accept either
a :class:`Tensor` or a plain ndarray and dispatch accordingly; trainers use
this to run cheap no-gradient forward passes through the same model code.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError

Array = np.ndarray

# ops whose outputs can silently go non-finite; checked on every forward
_CHECKED_OPS = ("exp", "log", "div", "pow", "solve")


def _as_value(x) -> Array:
    if isinstance(x, Tensor):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _check_finite(value: Array, op: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite value produced by '{op}'")


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Node in the computation graph: a float64 array plus its pullback."""

    __slots__ = ("value", "parents", "op", "_pullback")

    # make ndarray <op> Tensor defer to the reflected Tensor methods
    __array_ufunc__ = None

    def __init__(self, value, parents=(), op="leaf", pullback=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents: tuple[Tensor, ...] = parents
        self.op = op
        self._pullback: Callable[[Array], tuple] | None = pullback

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape})"

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other
        out = Tensor(
            a.value + b.value, (a, b), "add",
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        )
        return out

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor(-a.value, (a,), "neg", lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor(
            a.value * b.value, (a, b), "mul",
            lambda g: (_unbroadcast(g * b.value, a.shape),
                       _unbroadcast(g * a.value, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other
        with np.errstate(divide="ignore", invalid="ignore"):
            value = a.value / b.value
        _check_finite(value, "div")
        return Tensor(
            value, (a, b), "div",
            lambda g: (_unbroadcast(g / b.value, a.shape),
                       _unbroadcast(-g * a.value / (b.value ** 2), b.shape)),
        )

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a = self
        with np.errstate(over="ignore", invalid="ignore"):
            value = a.value ** exponent
        _check_finite(value, "pow")
        return Tensor(
            value, (a,), "pow",
            lambda g: (g * exponent * a.value ** (exponent - 1),),
        )

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, index):
        a = self
        value = a.value[index]

        def pullback(g):
            ga = np.zeros_like(a.value)
            np.add.at(ga, index, g)
            return (ga,)

        return Tensor(value, (a,), "getitem", pullback)

    # -- shape -----------------------------------------------------------

    def reshape(self, *shape):
        a = self
        old = a.shape
        return Tensor(a.value.reshape(*shape), (a,), "reshape",
                      lambda g: (g.reshape(old),))

    def sum(self, axis=None, keepdims=False):
        a = self
        value = a.value.sum(axis=axis, keepdims=keepdims)

        def pullback(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Tensor(value, (a,), "sum", pullback)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.value.size
        else:
            count = self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- nonlinearities ----------------------------------------------------

    def exp(self):
        a = self
        with np.errstate(over="ignore"):
            value = np.exp(a.value)
        _check_finite(value, "exp")
        return Tensor(value, (a,), "exp", lambda g: (g * value,))

    def log(self):
        a = self
        with np.errstate(divide="ignore", invalid="ignore"):
            value = np.log(a.value)
        _check_finite(value, "log")
        return Tensor(value, (a,), "log", lambda g: (g / a.value,))

    def tanh(self):
        a = self
        value = np.tanh(a.value)
        return Tensor(value, (a,), "tanh", lambda g: (g * (1.0 - value ** 2),))

    def relu(self):
        a = self
        value = np.maximum(a.value, 0.0)
        return Tensor(value, (a,), "relu",
                      lambda g: (g * (a.value > 0.0),))

    def sigmoid(self):
        a = self
        value = _sigmoid_value(a.value)
        return Tensor(value, (a,), "sigmoid",
                      lambda g: (g * value * (1.0 - value),))

    def detach(self) -> Array:
        """Value with the gradient path cut (stop_gradient)."""
        return self.value

    def item(self) -> float:
        return float(self.value)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _sigmoid_value(x: Array) -> Array:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- primitives on one or two tensors -------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy ``@`` semantics.

    Supports (..., n, m) @ (..., m, k) with broadcast leading dims, and the
    vector form (m,) @ (m, k). The (..., m) @ (m,) form is intentionally
    unsupported; reshape at the call site instead.
    """
    av, bv = a.value, b.value
    if bv.ndim == 1:
        raise ValueError("matmul with a 1-D right operand is not supported")
    value = av @ bv

    def pullback(g):
        if av.ndim == 1:
            ga = _unbroadcast((g[..., None, :] * bv).sum(axis=-1), av.shape)
            gb = _unbroadcast(av[:, None] * g[..., None, :], bv.shape)
        else:
            ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
            gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return (ga, gb)

    return Tensor(value, (a, b), "matmul", pullback)


def concat(parts: Sequence, axis: int = -1):
    """Concatenate tensors/arrays; differentiable when any part is a Tensor."""
    if not any(isinstance(p, Tensor) for p in parts):
        return np.concatenate(parts, axis=axis)
    tensors = tuple(as_tensor(p) for p in parts)
    value = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.value.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def pullback(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(value, tensors, "concat", pullback)


def stack(parts: Sequence, axis: int = 0):
    if not any(isinstance(p, Tensor) for p in parts):
        return np.stack(parts, axis=axis)
    tensors = tuple(as_tensor(p) for p in parts)
    value = np.stack([t.value for t in tensors], axis=axis)

    def pullback(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor(value, tensors, "stack", pullback)


def take_last(x, indices):
    """Gather along the last axis: result[i...] = x[i..., indices[i...]]."""
    idx = np.asarray(indices)
    if not isinstance(x, Tensor):
        return np.take_along_axis(x, idx[..., None], axis=-1)[..., 0]
    a = x
    value = np.take_along_axis(a.value, idx[..., None], axis=-1)[..., 0]

    def pullback(g):
        ga = np.zeros_like(a.value)
        np.put_along_axis(ga, idx[..., None], np.asarray(g)[..., None], axis=-1)
        return (ga,)

    return Tensor(value, (a,), "take_last", pullback)


def log_sigmoid(x):
    """log(sigmoid(x)), stable for large |x|; log(1-sigmoid(x)) = log_sigmoid(-x)."""
    if not isinstance(x, Tensor):
        return -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))
    a = x
    value = -np.logaddexp(0.0, -a.value)
    return Tensor(value, (a,), "log_sigmoid",
                  lambda g: (g * _sigmoid_value(-a.value),))


def repeat_rows(x, k: int):
    """Repeat each leading-axis row k times (np.repeat along axis 0)."""
    if not isinstance(x, Tensor):
        return np.repeat(x, k, axis=0)
    a = x
    v = a.value
    value = np.repeat(v, k, axis=0)

    def pullback(g):
        return (g.reshape(v.shape[0], k, *v.shape[1:]).sum(axis=1),)

    return Tensor(value, (a,), "repeat_rows", pullback)


def log_softmax(x, axis: int = -1):
    if not isinstance(x, Tensor):
        m = np.max(x, axis=axis, keepdims=True)
        z = x - m
        return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    a = x
    m = np.max(a.value, axis=axis, keepdims=True)
    z = a.value - m
    value = z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))

    def pullback(g):
        return (g - np.exp(value) * g.sum(axis=axis, keepdims=True),)

    return Tensor(value, (a,), "log_softmax", pullback)


def softmax(x, axis: int = -1):
    ls = log_softmax(x, axis=axis)
    if isinstance(ls, Tensor):
        return ls.exp()
    return np.exp(ls)


def huber(residual, delta: float = 1.0):
    """Elementwise Huber on a residual: quadratic inside ``delta``, linear out."""
    if not isinstance(residual, Tensor):
        r = np.asarray(residual)
        small = np.abs(r) <= delta
        return np.where(small, 0.5 * r ** 2, delta * (np.abs(r) - 0.5 * delta))
    a = residual
    r = a.value
    small = np.abs(r) <= delta
    value = np.where(small, 0.5 * r ** 2, delta * (np.abs(r) - 0.5 * delta))
    return Tensor(value, (a,), "huber",
                  lambda g: (g * np.clip(r, -delta, delta),))


def linear_solve(a, b):
    """x solving A x = b (b 1-D), differentiable in both arguments."""
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        return np.linalg.solve(a, b)
    at, bt = as_tensor(a), as_tensor(b)
    if bt.value.ndim != 1:
        raise ValueError("linear_solve expects a 1-D right-hand side")
    value = np.linalg.solve(at.value, bt.value)
    _check_finite(value, "solve")

    def pullback(g):
        gb = np.linalg.solve(at.value.T, g)
        ga = -np.outer(gb, value)
        return (ga, gb)

    return Tensor(value, (at, bt), "solve", pullback)


# -- dispatch helpers (Tensor or ndarray) ----------------------------------


def tanh(x):
    return x.tanh() if isinstance(x, Tensor) else np.tanh(x)


def sigmoid(x):
    return x.sigmoid() if isinstance(x, Tensor) else _sigmoid_value(np.asarray(x, dtype=np.float64))


def relu(x):
    return x.relu() if isinstance(x, Tensor) else np.maximum(x, 0.0)


def exp(x):
    return x.exp() if isinstance(x, Tensor) else np.exp(x)


def log(x):
    return x.log() if isinstance(x, Tensor) else np.log(x)


def detach(x):
    return x.detach() if isinstance(x, Tensor) else x


def magic_box(log_prob_sum):
    """Surrogate factor with forward value exactly 1.

    ``exp(x - stop_gradient(x))``: multiplying a quantity by this leaves its
    value unchanged while attaching the score-function gradient of ``x``.
    """
    if not isinstance(log_prob_sum, Tensor):
        return np.ones_like(np.asarray(log_prob_sum, dtype=np.float64))
    return (log_prob_sum - log_prob_sum.detach()).exp()


# -- backward pass ---------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def gradients(root: Tensor, leaves: Sequence[Tensor]) -> list[Array]:
    """Gradients of a scalar ``root`` with respect to ``leaves``.

    Stateless: repeated calls on the same or overlapping graphs are fine.
    Leaves the root does not depend on get zero gradients.
    """
    if root.value.size != 1:
        raise ValueError("gradients expects a scalar root")
    cotangent: dict[int, Array] = {id(root): np.ones_like(root.value)}
    leaf_ids = {id(l) for l in leaves}
    for node in reversed(_topo_order(root)):
        g = cotangent.get(id(node))
        if g is None:
            continue
        if id(node) not in leaf_ids:
            del cotangent[id(node)]
        if node._pullback is None:
            continue
        for parent, pg in zip(node.parents, node._pullback(g)):
            if pg is None:
                continue
            acc = cotangent.get(id(parent))
            if acc is None:
                cotangent[id(parent)] = np.asarray(pg, dtype=np.float64)
            else:
                cotangent[id(parent)] = acc + pg
    return [cotangent.get(id(l), np.zeros_like(l.value)) for l in leaves]


def finite_difference(f: Callable[[list[Array]], float], arrays: Sequence[Array],
                      eps: float = 1e-5) -> list[Array]:
    """Central-difference gradient of ``f`` at ``arrays`` (test oracle helper)."""
    grads = []
    base = [np.array(a, dtype=np.float64) for a in arrays]
    for k, a in enumerate(base):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(base)
            flat[i] = orig - eps
            fm = f(base)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads
