"""Differentiable primitives.

Every function takes and returns :class:`Tensor`. Each primitive computes its
forward value with numpy and records a closure mapping the output gradient to
input gradients. Broadcasting follows numpy rules; gradients of broadcast
operands are summed back to the operand's shape.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError, DimensionError, NumericError
from .tensor import Tensor

Scalar = Union[int, float]


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


def _check_dtypes(a: Tensor, b: Tensor) -> None:
    if a.dtype != b.dtype:
        raise ContractError(f"dtype mismatch: {a.dtype} vs {b.dtype}")


def _binary_prep(a, b) -> Tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    if not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    _check_dtypes(a, b)
    _broadcast_shape(a, b)
    return a, b


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _binary_prep(a, b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data + b.data, "add", (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a, b) -> Tensor:
    a, b = _binary_prep(a, b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data - b.data, "sub", (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    )


def mul(a, b) -> Tensor:
    a, b = _binary_prep(a, b)
    ad, bd = a.data, b.data
    return Tensor._from_op(
        ad * bd,
        "mul",
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _binary_prep(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return Tensor._from_op(out, "div", (a, b), back)


def neg(x: Tensor) -> Tensor:
    return Tensor._from_op(-x.data, "neg", (x,), lambda g: (-g,))


def scale(x: Tensor, c: Scalar) -> Tensor:
    c = float(c)
    return Tensor._from_op(x.data * c, "scale", (x,), lambda g: (g * c,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._from_op(out, "exp", (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise NumericError("log of non-positive value")
    return Tensor._from_op(np.log(xd), "log", (x,), lambda g: (g / xd,))


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise NumericError("sqrt of negative value")
    out = np.sqrt(x.data)
    return Tensor._from_op(out, "sqrt", (x,), lambda g: (g * 0.5 / out,))


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    sign = np.sign(x.data)
    return Tensor._from_op(np.abs(x.data), "abs", (x,), lambda g: (g * sign,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return Tensor._from_op(out, "sigmoid", (x,), lambda g: (g * out * (1 - out),))


def silu(x: Tensor) -> Tensor:
    xd = x.data
    s = _sigmoid(xd)
    return Tensor._from_op(xd * s, "silu", (x,), lambda g: (g * s * (1 + xd * (1 - s)),))


def relu(x: Tensor) -> Tensor:
    mask = (x.data > 0).astype(x.dtype)
    return Tensor._from_op(x.data * mask, "relu", (x,), lambda g: (g * mask,))


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    out = np.logaddexp(0, xd).astype(x.dtype, copy=False)
    return Tensor._from_op(out, "softplus", (x,), lambda g: (g * _sigmoid(xd),))


def astype(x: Tensor, dtype) -> Tensor:
    dtype = np.dtype(dtype)
    src = x.dtype
    return Tensor._from_op(x.data.astype(dtype), "astype", (x,), lambda g: (g.astype(src),))


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._from_op(np.asarray(out, dtype=x.dtype), "sum", (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(sum(x, axis=axes, keepdims=keepdims), 1.0 / n)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes of a channels-last map [B,H,W,C] -> [B,C]."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects [B,H,W,C], got {x.shape}")
    return mean(x, axis=(1, 2))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {src} to {tuple(shape)}") from None
    return Tensor._from_op(out, "reshape", (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(
        np.ascontiguousarray(x.data.transpose(axes)), "transpose", (x,), lambda g: (g.transpose(inv),)
    )


def getitem(x: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        raise ContractError("index with numpy arrays, not Tensors")
    shape, dtype = x.shape, x.dtype
    out = x.data[index]
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in parts)

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return Tensor._from_op(np.array(out, dtype=dtype), "getitem", (x,), back)


def take(x: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along one axis with an integer index array."""
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % x.ndim
    shape = x.shape
    out = np.take(x.data, indices, axis=axis)
    unique = np.unique(indices).size == indices.size

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        moved = np.moveaxis(full, axis, 0)
        if unique:
            moved[indices] = np.moveaxis(g, axis, 0)
        else:
            np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return Tensor._from_op(out, "take", (x,), back)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = tuple(xs)
    for t in xs[1:]:
        _check_dtypes(xs[0], t)
    try:
        out = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    sizes = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Tensor._from_op(out, "concat", xs, back)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = tuple(xs)
    for t in xs[1:]:
        if t.shape != xs[0].shape:
            raise DimensionError(f"stack: shapes differ {xs[0].shape} vs {t.shape}")
        _check_dtypes(xs[0], t)
    out = np.stack([t.data for t in xs], axis=axis)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return Tensor._from_op(out, "stack", xs, back)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``[..., m, k] @ [..., k, n]``."""
    _check_dtypes(a, b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise DimensionError(f"matmul: inner extents differ for shapes {a.shape} and {b.shape}")
    if a.ndim == 1 and b.ndim > 2:
        raise DimensionError(f"matmul: vector @ batched matrix is unsupported ({a.shape} @ {b.shape})")
    ad, bd = a.data, b.data
    try:
        out = ad @ bd
    except ValueError:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def back(g):
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if bd.ndim == 1:
            return np.multiply.outer(g, bd), np.tensordot(g, ad, axes=(tuple(range(g.ndim)), tuple(range(g.ndim))))
        if ad.ndim == 1:
            return bd @ g, np.multiply.outer(ad, g)
        ga = g @ bd.swapaxes(-1, -2)
        if bd.ndim == 2:
            k, n = bd.shape
            gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = ad.swapaxes(-1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._from_op(out, "matmul", (a, b), back)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip).

    ``x`` is ``[B, C_in, H, W]`` and ``w`` is ``[C_out, C_in, kh, kw]``; output is
    ``[B, C_out, H', W']`` with ``H' = (H + 2p - kh) // stride + 1``.
    """
    _check_dtypes(x, w)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernel, got {x.shape} and {w.shape}")
    B, cin, H, W = x.shape
    cout, wcin, kh, kw = w.shape
    if wcin != cin:
        raise DimensionError(f"conv2d: input has {cin} channels but kernel expects {wcin} ({x.shape} vs {w.shape})")
    if stride < 1 or padding < 0:
        raise ContractError("conv2d: stride must be >= 1 and padding >= 0")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho, Wo = (Hp - kh) // stride + 1, (Wp - kw) // stride + 1
    xd, wd = x.data, w.data
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]  # B,Cin,Ho,Wo,kh,kw
    out = np.tensordot(cols, wd, axes=([1, 4, 5], [1, 2, 3]))  # B,Ho,Wo,Cout
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def back(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))  # Cout,Cin,kh,kw
        gcols = np.tensordot(g, wd, axes=([1], [0]))  # B,Ho,Wo,Cin,kh,kw
        gxp = np.zeros(xp.shape, dtype=xd.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += gcols[..., i, j].transpose(
                    0, 3, 1, 2
                )
        gx = gxp[:, :, padding : padding + H, padding : padding + W] if padding else gxp
        return np.ascontiguousarray(gx), gw

    return Tensor._from_op(out, "conv2d", (x, w), back)


# ---------------------------------------------------------------------------
# normalisation and probability
# ---------------------------------------------------------------------------

def _require_finite(x: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{op}: non-finite input")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    _require_finite(x.data, "softmax")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, "softmax", (x,), back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _require_finite(x.data, "log_softmax")
    m = x.data.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True))
    out = x.data - lse

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, "log_softmax", (x,), back)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layernorm: gamma/beta must have shape ({c},), got {gamma.shape} and {beta.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead)
        gbeta = g.sum(axis=lead)
        gx_hat = g * gd
        gx = inv * (
            gx_hat - gx_hat.mean(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, ggamma, gbeta

    return Tensor._from_op(out, "layernorm", (x, gamma, beta), back)


def cosine_sim(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity along the last axis; leading axes broadcast.

    A zero-norm operand raises :class:`NumericError` instead of being smoothed.
    """
    _check_dtypes(a, b)
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"cosine_sim: last extents differ, {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    na = np.sqrt((ad * ad).sum(axis=-1, keepdims=True))
    nb = np.sqrt((bd * bd).sum(axis=-1, keepdims=True))
    if np.any(na == 0) or np.any(nb == 0):
        raise NumericError("cosine_sim: zero-norm operand")
    dot = (ad * bd).sum(axis=-1, keepdims=True)
    c = dot / (na * nb)
    out = c[..., 0]

    def back(g):
        g = g[..., None]
        ga = g * (bd / (na * nb) - c * ad / (na * na))
        gb = g * (ad / (na * nb) - c * bd / (nb * nb))
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._from_op(np.asarray(out), "cosine_sim", (a, b), back)


def norm(x: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at the origin is taken as zero."""
    xd = x.data
    out = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    safe = np.where(out > 0, out, 1.0)

    def back(g):
        return (np.expand_dims(g, axis) * np.where(out > 0, xd / safe, 0.0),)

    return Tensor._from_op(np.squeeze(out, axis=axis), "norm", (x,), back)
