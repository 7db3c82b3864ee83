"""Define-by-run reverse-mode differentiation over numpy arrays.

Every op accepts plain arrays or :class:`Var` nodes. When none of the inputs is
a ``Var`` the op returns a plain ``ndarray`` and records nothing, so the same
network code serves gradient-free inference and training.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when an op receives operands of incompatible shapes."""

    def __init__(self, node: str, detail: str):
        super().__init__(f"shape error in {node}: {detail}")
        self.node = node


class Var:
    """A node in the computation graph."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "op")

    def __init__(self, value, parents: Sequence["Var"] = (), backward_fn: Callable | None = None,
                 op: str = "leaf"):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.value.shape})"

    # arithmetic sugar
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

    def __matmul__(self, other):
        return matmul(self, other)


def value_of(x) -> np.ndarray:
    """Array behind ``x``; floating arrays keep their precision, anything else becomes float64."""
    if isinstance(x, Var):
        return x.value
    arr = np.asarray(x)
    return arr if arr.dtype.kind == "f" else arr.astype(float)


def _tracked(*xs) -> bool:
    return any(isinstance(x, Var) for x in xs)


def _node(value, parents, backward_fn, op):
    return Var(value, [p for p in parents], backward_fn, op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(root: Var, seed=None) -> None:
    """Accumulate d(root)/d(node) into ``node.grad`` for every reachable node.

    Gradients of all nodes in the graph are reset first, so calling this twice
    on different roots of a shared graph gives independent results.
    """
    order: list[Var] = []
    seen: set[int] = set()
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
        for parent in node.parents:
            if isinstance(parent, Var) and id(parent) not in seen:
                stack.append((parent, False))
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value) if seed is None else np.asarray(seed, dtype=float)
    owned: set[int] = set()
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        parent_grads = node.backward_fn(node.grad)
        for parent, g in zip(node.parents, parent_grads):
            if not isinstance(parent, Var) or g is None:
                continue
            _accumulate(parent, g, owned)


class IndexedGrad:
    """Gradient that is nonzero only at ``index`` of the parent (from slicing/gathering)."""

    __slots__ = ("index", "value", "basic")

    def __init__(self, index, value, basic: bool):
        self.index = index
        self.value = value
        self.basic = basic


def _accumulate(parent: Var, g, owned: set) -> None:
    """Add ``g`` into ``parent.grad``; buffers the tape allocated are updated in place."""
    key = id(parent)
    if isinstance(g, IndexedGrad):
        if key not in owned:
            parent.grad = np.zeros_like(parent.value) if parent.grad is None else parent.grad.copy()
            owned.add(key)
        if g.basic:
            parent.grad[g.index] += g.value
        else:
            np.add.at(parent.grad, g.index, g.value)
        return
    if parent.grad is None:
        parent.grad = g
    elif key in owned:
        parent.grad += g
    else:
        parent.grad = parent.grad + g
        owned.add(key)


# --------------------------------------------------------------------------- elementwise

def add(a, b):
    av, bv = value_of(a), value_of(b)
    try:
        out = av + bv
    except ValueError as exc:
        raise ShapeError("add", str(exc)) from None
    if not _tracked(a, b):
        return out
    return _node(out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)), "add")


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    try:
        out = av - bv
    except ValueError as exc:
        raise ShapeError("sub", str(exc)) from None
    if not _tracked(a, b):
        return out
    return _node(out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)), "sub")


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    try:
        out = av * bv
    except ValueError as exc:
        raise ShapeError("mul", str(exc)) from None
    if not _tracked(a, b):
        return out
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)), "mul")


def relu(x):
    xv = value_of(x)
    out = np.maximum(xv, 0.0)
    if not _tracked(x):
        return out
    return _node(out, (x,), lambda g: (g * (xv > 0),), "relu")


def elu(x, alpha: float = 1.0):
    xv = value_of(x)
    neg = alpha * np.expm1(np.minimum(xv, 0.0))
    out = np.where(xv > 0, xv, neg)
    if not _tracked(x):
        return out
    return _node(out, (x,), lambda g: (g * np.where(xv > 0, 1.0, neg + alpha),), "elu")


def tanh(x):
    out = np.tanh(value_of(x))
    if not _tracked(x):
        return out
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x):
    out = _sigmoid(value_of(x))
    if not _tracked(x):
        return out
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(x):
    out = np.exp(value_of(x))
    if not _tracked(x):
        return out
    return _node(out, (x,), lambda g: (g * out,), "exp")


def absolute(x):
    xv = value_of(x)
    out = np.abs(xv)
    if not _tracked(x):
        return out
    return _node(out, (x,), lambda g: (g * np.sign(xv),), "abs")


# --------------------------------------------------------------------------- linear algebra

def matmul(a, b):
    """``a @ b`` for 2-D operands or equally batched 3-D operands."""
    av, bv = value_of(a), value_of(b)
    if av.ndim != bv.ndim or av.ndim not in (2, 3) or av.shape[-1] != bv.shape[-2] \
            or (av.ndim == 3 and av.shape[0] != bv.shape[0]):
        raise ShapeError("matmul", f"{av.shape} @ {bv.shape}")
    out = av @ bv
    if not _tracked(a, b):
        return out

    def grad_fn(g):
        return g @ np.swapaxes(bv, -1, -2), np.swapaxes(av, -1, -2) @ g

    return _node(out, (a, b), grad_fn, "matmul")


def affine(x, weight, bias):
    """``x @ weight + bias`` with ``x`` of shape (..., in)."""
    xv, wv, bv = value_of(x), value_of(weight), value_of(bias)
    if wv.ndim != 2 or xv.shape[-1] != wv.shape[0] or bv.shape != (wv.shape[1],):
        raise ShapeError("affine", f"x {xv.shape}, W {wv.shape}, b {bv.shape}")
    out = xv @ wv + bv
    if not _tracked(x, weight, bias):
        return out

    def grad_fn(g):
        flat_x = xv.reshape(-1, xv.shape[-1])
        flat_g = g.reshape(-1, g.shape[-1])
        return g @ wv.T, flat_x.T @ flat_g, flat_g.sum(axis=0)

    return _node(out, (x, weight, bias), grad_fn, "affine")


def gru_cell(x, h, w_input, w_hidden, b_input, b_hidden):
    """One gated-recurrent step (reset, update, candidate gate order).

    ``w_input`` is (in, 3H), ``w_hidden`` is (H, 3H); the hidden contribution
    to the candidate is gated by the reset gate after its bias is added.
    """
    xv, wi = value_of(x), value_of(w_input)
    if wi.ndim != 2 or xv.shape[-1] != wi.shape[0]:
        raise ShapeError("gru_cell", f"x {xv.shape}, Wi {wi.shape}")
    return gru_step(affine(x, w_input, b_input), h, w_hidden, b_hidden)


def gru_step(projected, h, w_hidden, b_hidden):
    """Recurrent half of a GRU step given the input projection ``x @ W_i + b_i`` of shape (..., 3H)."""
    gi, hv = value_of(projected), value_of(h)
    wh, bh = value_of(w_hidden), value_of(b_hidden)
    hidden = wh.shape[0]
    if (wh.shape != (hidden, 3 * hidden) or gi.shape[-1] != 3 * hidden or hv.shape[-1] != hidden
            or bh.shape != (3 * hidden,) or gi.shape[:-1] != hv.shape[:-1]):
        raise ShapeError("gru_cell", f"projection {gi.shape}, h {hv.shape}, Wh {wh.shape}")
    gh = hv @ wh + bh
    rz = _sigmoid(gi[..., :2 * hidden] + gh[..., :2 * hidden])
    r, z = rz[..., :hidden], rz[..., hidden:]
    hn = gh[..., 2 * hidden:]
    n = np.tanh(gi[..., 2 * hidden:] + r * hn)
    out = n + z * (hv - n)
    if not _tracked(projected, h, w_hidden, b_hidden):
        return out

    def grad_fn(g):
        dn_pre = g * (1.0 - z) * (1.0 - n * n)
        dr_pre = dn_pre * hn * r * (1.0 - r)
        dz_pre = g * (hv - n) * z * (1.0 - z)
        dgi = np.concatenate([dr_pre, dz_pre, dn_pre], axis=-1)
        dgh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=-1)
        flat_h = hv.reshape(-1, hidden)
        flat_gh = dgh.reshape(-1, 3 * hidden)
        return dgi, g * z + dgh @ wh.T, flat_h.T @ flat_gh, flat_gh.sum(axis=0)

    return _node(out, (projected, h, w_hidden, b_hidden), grad_fn, "gru_step")


# --------------------------------------------------------------------------- structure

def concat(xs: Sequence, axis: int = -1):
    values = [value_of(x) for x in xs]
    try:
        out = np.concatenate(values, axis=axis)
    except ValueError as exc:
        raise ShapeError("concat", str(exc)) from None
    if not _tracked(*xs):
        return out
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(xs), grad_fn, "concat")


def stack(xs: Sequence, axis: int = 0):
    values = [value_of(x) for x in xs]
    try:
        out = np.stack(values, axis=axis)
    except ValueError as exc:
        raise ShapeError("stack", str(exc)) from None
    if not _tracked(*xs):
        return out

    def grad_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(values)))

    return _node(out, tuple(xs), grad_fn, "stack")


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def take(x, index):
    """``x[index]`` for any numpy basic or advanced index."""
    xv = value_of(x)
    try:
        out = xv[index]
    except IndexError as exc:
        raise ShapeError("slice", str(exc)) from None
    if not _tracked(x):
        return np.asarray(out, dtype=float)

    basic = _is_basic(index)

    def grad_fn(g):
        return (IndexedGrad(index, g, basic),)

    return _node(out, (x,), grad_fn, "slice")


def reshape(x, shape):
    xv = value_of(x)
    try:
        out = xv.reshape(shape)
    except ValueError as exc:
        raise ShapeError("reshape", str(exc)) from None
    if not _tracked(x):
        return out
    return _node(out, (x,), lambda g: (g.reshape(xv.shape),), "reshape")


def take_along(x, indices, axis: int = -1):
    """Gather ``x`` along ``axis`` with an integer array (e.g. Q of taken actions)."""
    xv = value_of(x)
    idx = np.expand_dims(np.asarray(indices, dtype=np.int64), axis)
    out = np.take_along_axis(xv, idx, axis=axis).squeeze(axis)
    if not _tracked(x):
        return out

    def grad_fn(g):
        full = np.zeros_like(xv)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _node(out, (x,), grad_fn, "take_along")


def total(x, axis=None):
    xv = value_of(x)
    out = xv.sum(axis=axis)
    if not _tracked(x):
        return out

    def grad_fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xv.shape).copy(),)

    return _node(out, (x,), grad_fn, "sum")


def mean(x, axis=None):
    xv = value_of(x)
    count = xv.size if axis is None else xv.shape[axis]
    return mul(total(x, axis=axis), 1.0 / count)


# --------------------------------------------------------------------------- losses

def mse(prediction, target):
    """Mean of squared differences over every element."""
    pv, tv = value_of(prediction), value_of(target)
    if pv.shape != tv.shape:
        raise ShapeError("mse", f"{pv.shape} vs {tv.shape}")
    diff = pv - tv
    out = np.asarray(np.mean(diff * diff))
    if not _tracked(prediction, target):
        return out
    scale = 2.0 / diff.size
    return _node(out, (prediction, target), lambda g: (g * scale * diff, -g * scale * diff), "mse")


def gaussian_loglik(target, mean_, include_constant: bool = False):
    """Unit-variance Gaussian log-likelihood summed over the last axis."""
    tv, mv = value_of(target), value_of(mean_)
    if tv.shape != mv.shape:
        raise ShapeError("gaussian_loglik", f"{tv.shape} vs {mv.shape}")
    diff = tv - mv
    out = -0.5 * np.sum(diff * diff, axis=-1)
    if include_constant:
        out = out - 0.5 * tv.shape[-1] * np.log(2.0 * np.pi)
    if not _tracked(target, mean_):
        return out

    def grad_fn(g):
        ge = np.expand_dims(g, -1)
        return -ge * diff, ge * diff

    return _node(out, (target, mean_), grad_fn, "gaussian_loglik")


def kl_std_normal(mu, log_var):
    """KL(N(mu, exp(log_var)) || N(0, I)) summed over the last axis."""
    mv, lv = value_of(mu), value_of(log_var)
    if mv.shape != lv.shape:
        raise ShapeError("kl_std_normal", f"{mv.shape} vs {lv.shape}")
    var = np.exp(lv)
    out = 0.5 * np.sum(mv * mv + var - lv - 1.0, axis=-1)
    if not _tracked(mu, log_var):
        return out

    def grad_fn(g):
        ge = np.expand_dims(g, -1)
        return ge * mv, ge * 0.5 * (var - 1.0)

    return _node(out, (mu, log_var), grad_fn, "kl_std_normal")
