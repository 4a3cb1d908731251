"""Array-valued reverse-mode differentiation.

Every differentiable primitive is registered in ``_VJP`` with its
vector-Jacobian product. A graph node whose op has no registered VJP makes
:func:`backprop` raise :class:`UnsupportedPrimitive`.
"""
from __future__ import annotations

from typing import Callable, Dict, Iterable, Optional, Sequence

import numpy as np


class UnsupportedPrimitive(RuntimeError):
    pass


_VJP: Dict[str, Callable] = {}


def register_vjp(op: str):
    def deco(fn):
        _VJP[op] = fn
        return fn
    return deco


def supported_primitives() -> tuple:
    return tuple(sorted(_VJP))


class Tensor:
    """A node in the computation graph.

    Leaves are created directly; interior nodes via :func:`apply`. Nodes
    that do not depend on any ``requires_grad`` leaf carry no graph.
    """

    __slots__ = ("data", "op", "parents", "ctx", "requires_grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 op: Optional[str] = None, parents: Sequence["Tensor"] = (), ctx=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.op = op
        self.parents = tuple(parents)
        self.ctx = ctx

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = self.name or self.op or "leaf"
        return f"Tensor<{tag}>(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic -----------------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not a supported primitive")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def apply(op: str, out: np.ndarray, parents: Sequence[Tensor], ctx=None) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(out)
    return Tensor(out, requires_grad=True, op=op, parents=parents, ctx=ctx)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# primitives ----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return apply("add", a.data + b.data, (a, b))


@register_vjp("add")
def _add_vjp(g, node):
    a, b = node.parents
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return apply("sub", a.data - b.data, (a, b))


@register_vjp("sub")
def _sub_vjp(g, node):
    a, b = node.parents
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return apply("mul", a.data * b.data, (a, b))


@register_vjp("mul")
def _mul_vjp(g, node):
    a, b = node.parents
    ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
    gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
    return ga, gb


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return apply("matmul", a.data @ b.data, (a, b))


@register_vjp("matmul")
def _matmul_vjp(g, node):
    a, b = node.parents
    ga = gb = None
    if a.requires_grad:
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
    if b.requires_grad:
        if a.ndim == 1:
            gb = np.outer(a.data, g)
        else:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
    return ga, gb


def affine(x, w, b) -> Tensor:
    """``x @ w + b`` as one node."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    return apply("affine", x.data @ w.data + b.data, (x, w, b))


@register_vjp("affine")
def _affine_vjp(g, node):
    x, w, b = node.parents
    gx = g @ w.data.T if x.requires_grad else None
    gw = None
    if w.requires_grad:
        x2 = x.data.reshape(-1, x.shape[-1])
        gw = x2.T @ g.reshape(-1, g.shape[-1])
    gb = _unbroadcast(g, b.shape) if b.requires_grad else None
    return gx, gw, gb


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return apply("exp", out, (x,), out)


@register_vjp("exp")
def _exp_vjp(g, node):
    return (g * node.ctx,)


def log(x) -> Tensor:
    x = as_tensor(x)
    return apply("log", np.log(x.data), (x,))


@register_vjp("log")
def _log_vjp(g, node):
    return (g / node.parents[0].data,)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return apply("tanh", out, (x,), out)


@register_vjp("tanh")
def _tanh_vjp(g, node):
    return (g * (1.0 - node.ctx ** 2),)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return apply("sigmoid", out, (x,), out)


@register_vjp("sigmoid")
def _sigmoid_vjp(g, node):
    s = node.ctx
    return (g * s * (1.0 - s),)


def square(x) -> Tensor:
    x = as_tensor(x)
    return apply("square", x.data ** 2, (x,))


@register_vjp("square")
def _square_vjp(g, node):
    return (2.0 * g * node.parents[0].data,)


def tsum(x, axis=None) -> Tensor:
    x = as_tensor(x)
    return apply("sum", np.sum(x.data, axis=axis), (x,), axis)


@register_vjp("sum")
def _sum_vjp(g, node):
    (x,) = node.parents
    axis = node.ctx
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def tmean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return apply("reshape", x.data.reshape(shape), (x,))


@register_vjp("reshape")
def _reshape_vjp(g, node):
    return (g.reshape(node.parents[0].shape),)


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    return apply("getitem", x.data[idx], (x,), idx)


@register_vjp("getitem")
def _getitem_vjp(g, node):
    (x,) = node.parents
    out = np.zeros(x.shape)
    idx = node.ctx
    parts = idx if isinstance(idx, tuple) else (idx,)
    if all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts):
        out[idx] = g
    else:
        np.add.at(out, idx, g)
    return (out,)


def take(x, index: np.ndarray, axis: int = -1) -> Tensor:
    """Gather along ``axis``; indices may repeat."""
    x = as_tensor(x)
    index = np.asarray(index)
    return apply("take", np.take(x.data, index, axis=axis), (x,), (index, axis))


@register_vjp("take")
def _take_vjp(g, node):
    (x,) = node.parents
    index, axis = node.ctx
    axis = axis % x.ndim
    out = np.zeros(x.shape)
    moved = np.moveaxis(out, axis, 0)
    np.add.at(moved, index, np.moveaxis(g, axis, 0))
    return (out,)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    sizes = [x.shape[axis] for x in xs]
    return apply("concat", out, xs, (axis, np.cumsum(sizes)[:-1]))


@register_vjp("concat")
def _concat_vjp(g, node):
    axis, splits = node.ctx
    return tuple(np.split(g, splits, axis=axis))


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    return apply("stack", np.stack([x.data for x in xs], axis=axis), xs, axis)


@register_vjp("stack")
def _stack_vjp(g, node):
    axis = node.ctx
    return tuple(np.moveaxis(g, axis, 0))


# losses ----------------------------------------------------------------------

def mse(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    diff = pred.data - target.data
    return apply("mse", np.mean(diff ** 2), (pred, target), diff)


@register_vjp("mse")
def _mse_vjp(g, node):
    diff = node.ctx
    gp = 2.0 * g * diff / diff.size
    return gp, -gp


BCE_CLAMP = 1e-7


def bce(prob, target) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1-1e-7]."""
    prob, target = as_tensor(prob), as_tensor(target)
    p = np.clip(prob.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = target.data
    val = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return apply("bce", val, (prob, target), p)


@register_vjp("bce")
def _bce_vjp(g, node):
    prob, target = node.parents
    p = node.ctx
    y = target.data
    inside = (prob.data > BCE_CLAMP) & (prob.data < 1.0 - BCE_CLAMP)
    gp = g * (-(y / p) + (1.0 - y) / (1.0 - p)) / p.size * inside
    gy = g * (-(np.log(p) - np.log(1.0 - p))) / p.size if target.requires_grad else None
    return gp, gy


def gaussian_kld(mu1, var1, mu2, var2) -> Tensor:
    """KL(N(mu1, var1) || N(mu2, var2)) for diagonal Gaussians, summed over dims."""
    mu1, var1, mu2, var2 = (as_tensor(t) for t in (mu1, var1, mu2, var2))
    d = mu1.data - mu2.data
    val = np.sum(0.5 * np.log(var2.data / var1.data)
                 + (var1.data + d ** 2) / (2.0 * var2.data) - 0.5)
    return apply("gaussian_kld", val, (mu1, var1, mu2, var2), d)


@register_vjp("gaussian_kld")
def _kld_vjp(g, node):
    mu1, var1, mu2, var2 = node.parents
    d = node.ctx
    v1, v2 = var1.data, var2.data
    return (g * d / v2,
            g * (-0.5 / v1 + 0.5 / v2),
            g * -d / v2,
            g * (0.5 / v2 - (v1 + d ** 2) / (2.0 * v2 ** 2)))


# reverse pass ----------------------------------------------------------------

def _toposort(root: Tensor) -> list:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backprop(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> Dict[str, np.ndarray]:
    """Gradients of scalar ``loss`` w.r.t. every trainable leaf it depends on.

    Returns ``{leaf.name: grad}``. If ``params`` is given, every listed
    trainable leaf appears in the result, with zeros when ``loss`` does not
    depend on it. Frozen leaves never appear.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: Dict[str, np.ndarray] = {}
    if loss.requires_grad:
        for node in reversed(_toposort(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.op is None:
                if node.name is None:
                    continue
                leaves[node.name] = leaves.get(node.name, 0.0) + g
                continue
            vjp = _VJP.get(node.op)
            if vjp is None:
                raise UnsupportedPrimitive(node.op)
            for parent, pg in zip(node.parents, vjp(g, node)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    if params is not None:
        for p in params:
            if p.requires_grad and p.name not in leaves:
                leaves[p.name] = np.zeros_like(p.data)
    return leaves
