"""Dense tensors with define-by-run reverse-mode differentiation.

Storage is numpy, row-major. Training runs in float32; the finite-difference
oracle in :mod:`tsgan.gradcheck` promotes everything to float64. Every op
accepts an optional leading batch axis wherever the shapes allow it.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

LEAKY_SLOPE = 0.2
LOG_CLAMP = 1e-12


class DimensionError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the tape (fake samples for the D phase etc.)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, np.ndarray):
        if dtype is not None:
            return data.astype(dtype, copy=False)
        if data.dtype in (np.float32, np.float64):
            return data
        return data.astype(np.float32)
    if dtype is None and isinstance(data, (np.float32, np.float64)):
        # 0-d arithmetic hands back numpy scalars; keep their precision
        return np.asarray(data)
    return np.asarray(data, dtype=dtype or np.float32)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    # -- conveniences -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype or np.float32))


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {op}")


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shapes(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- graph traversal --------------------------------------------------------

def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``; parents always precede children."""
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable leaf.

    Interior nodes get a fresh ``.grad`` each call; leaves accumulate so
    that several losses may be summed before an optimizer step.
    """
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = topological_order(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _broadcast_shapes(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _broadcast_shapes(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _broadcast_shapes(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                 "mul")


def div(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _broadcast_shapes(a, b, "div")
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw, "div")


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return _make(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _make(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1 - out * out),), "tanh")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    """Natural log with the input clamped at 1e-12 (zero gradient below the clamp)."""
    clamped = np.maximum(x.data, LOG_CLAMP)
    live = (x.data > LOG_CLAMP).astype(x.dtype)
    return _make(np.log(clamped), (x,), lambda g: (g * live / clamped,), "log")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def softplus(x: Tensor) -> Tensor:
    d = x.data
    out = np.maximum(d, 0) + np.log1p(np.exp(-np.abs(d)))
    e = np.exp(-np.abs(d))
    sig = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _make(out, (x,), lambda g: (g * sig,), "softplus")


# -- shape ------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {src} into {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    inv = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def index(x: Tensor, idx) -> Tensor:
    src_shape, dtype = x.shape, x.dtype
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in parts)

    def bw(g):
        full = np.zeros(src_shape, dtype=dtype)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(x.data[idx]), (x,), bw, "index")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as err:
        raise DimensionError(f"concat: {[t.shape for t in tensors]} along axis {axis}: {err}") from None
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, bounds, axis=ax)), "concat")


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise DimensionError(f"cannot broadcast {src} to {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (_unbroadcast(g, src),), "broadcast_to")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Repeat each of the last two axes ``factor`` times."""
    out = x.data.repeat(factor, axis=-2).repeat(factor, axis=-1)

    def bw(g):
        *lead, h, w = g.shape
        g = g.reshape(*lead, h // factor, factor, w // factor, factor)
        return (g.sum(axis=(-3, -1)),)

    return _make(out, (x,), bw, "upsample_nearest")


# -- reductions -------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    src = x.shape
    out = np.asarray(x.data.sum(axis=axes, keepdims=keepdims))

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, src).copy(),)

    return _make(out, (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    src = x.shape
    out = np.asarray(x.data.mean(axis=axes, keepdims=keepdims))

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, src).copy(),)

    return _make(out, (x,), bw, "mean")


def variance(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Population variance."""
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    centered = x.data - x.data.mean(axis=axes, keepdims=True)
    out = np.asarray((centered * centered).mean(axis=axes, keepdims=keepdims))

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (g * (2.0 / n) * centered,)

    return _make(out, (x,), bw, "variance")


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    with np.errstate(over="ignore", invalid="ignore"):  # reported by the finiteness check
        out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _make(out, (a, b), bw, "matmul")


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``; ``mask`` (broadcastable bool) marks admissible entries.

    Masked entries get exactly zero weight, as if their logits were -inf.
    """
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} out of range for rank {x.ndim}")
    _check_finite(x.data, "softmax input")
    logits = x.data
    if mask is not None:
        mask = np.broadcast_to(mask, logits.shape)
        logits = np.where(mask, logits, -np.inf)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = (e / e.sum(axis=axis, keepdims=True)).astype(x.dtype)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (x,), bw, "softmax")


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ W + b`` for x of shape [..., I] and W of shape [I, O]."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"fully_connected: input {x.shape} does not fit weight {weight.shape}")
    out = matmul(x if x.ndim >= 2 else reshape(x, (1, -1)), weight)
    if x.ndim == 1:
        out = reshape(out, (weight.shape[1],))
    if bias is not None:
        out = add(out, bias)
    return out


def conv1x1(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-pixel channel map: x [..., C, H, W], weight [C', C] -> [..., C', H, W]."""
    if x.ndim < 3 or x.shape[-3] != weight.shape[1]:
        raise DimensionError(f"conv1x1: input {x.shape} does not fit weight {weight.shape}")
    *lead, c, h, w = x.shape
    flat = reshape(x, (*lead, c, h * w))
    out = matmul(weight, flat)
    out = reshape(out, (*lead, weight.shape[0], h, w))
    if bias is not None:
        out = add(out, reshape(bias, (weight.shape[0], 1, 1)))
    return out


def conv2d_s2(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """4x4 convolution, stride 2, zero padding 1. x [B, C, H, W], weight [C', C, 4, 4]."""
    if x.ndim != 4:
        raise DimensionError(f"conv2d_s2 expects [B, C, H, W], got {x.shape}")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"conv2d_s2 needs even spatial extents, got {h}x{w}")
    if weight.shape[1:] != (c, 4, 4):
        raise DimensionError(f"conv2d_s2: input {x.shape} does not fit weight {weight.shape}")
    ho, wo = h // 2, w // 2
    padded = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (4, 4), axis=(2, 3))[:, :, ::2, ::2]
    # windows: [B, C, Ho, Wo, 4, 4]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(b, ho * wo, c * 16)
    wmat = weight.data.reshape(weight.shape[0], c * 16)
    out = np.matmul(cols, wmat.T).transpose(0, 2, 1).reshape(b, -1, ho, wo)

    def bw(g):
        gflat = g.reshape(b, -1, ho * wo)  # [B, C', HoWo]
        gw = np.einsum("bop,bpk->ok", gflat, cols).reshape(weight.shape)
        gcols = np.matmul(wmat.T, gflat).reshape(b, c, 4, 4, ho, wo)
        gpad = np.zeros_like(padded)
        for ki in range(4):
            for kj in range(4):
                gpad[:, :, ki:ki + 2 * ho:2, kj:kj + 2 * wo:2] += gcols[:, :, ki, kj]
        return (gpad[:, :, 1:-1, 1:-1], gw)

    res = _make(out.astype(x.dtype, copy=False), (x, weight), bw, "conv2d_s2")
    if bias is not None:
        res = add(res, reshape(bias, (-1, 1, 1)))
    return res


def downsample_block(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Halve the spatial extents: strided 4x4 conv then leaky-ReLU(0.2)."""
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1, *x.shape))
    out = leaky_relu(conv2d_s2(x, weight, bias))
    return reshape(out, out.shape[1:]) if squeeze else out


def embedding(ids: np.ndarray, table: Tensor) -> Tensor:
    """Row lookup ``table[ids]``; repeated ids accumulate gradient."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range for vocabulary of {table.shape[0]}")
    return index(table, ids)


def where_mask(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """``mask * a + (1 - mask) * b`` with a constant {0,1} mask."""
    m = np.asarray(mask, dtype=a.dtype)
    return add(mul(a, m), mul(b, 1.0 - m))


def pearson(a: Tensor, b: Tensor, eps: float = 1e-8) -> Tensor:
    """Pearson correlation along the last axis."""
    if a.shape != b.shape:
        raise DimensionError(f"pearson: shapes {a.shape} and {b.shape} differ")
    ac = sub(a, mean(a, axis=-1, keepdims=True))
    bc = sub(b, mean(b, axis=-1, keepdims=True))
    num = sum_(mul(ac, bc), axis=-1)
    den = sqrt(add(mul(sum_(mul(ac, ac), axis=-1), sum_(mul(bc, bc), axis=-1)), eps * eps))
    return div(num, den)

