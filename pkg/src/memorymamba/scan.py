"""Selective state-space scan and the four-direction 2-D cross scan.

The recurrence per channel ``c`` and state index ``n`` is::

    x_t = exp(delta_t * A) * x_{t-1} + delta_t * B_t * u_t,   x_0 = 0
    y_t = sum_n C_t[n] * x_t[n] + D * u_t

with ``A = -exp(A_log)`` (strictly negative), ``delta_t = softplus(proj_delta(u_t))``
and ``B_t``, ``C_t`` linear in ``u_t``.
"""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError
from .nn import Linear, Module, parameter


def discretize(A: np.ndarray, B: np.ndarray, delta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Zero-order hold on the diagonal transition, Euler step on the input matrix.

    Returns ``(exp(delta * A), delta * B)`` with ``delta`` broadcast against both.
    """
    delta = np.asarray(delta)
    if np.any(delta <= 0):
        raise ContractError("discretize: delta must be strictly positive")
    return np.exp(delta * np.asarray(A)), delta * np.asarray(B)


def scan_kernel(u: Tensor, delta: Tensor, A: Tensor, Bm: Tensor, Cm: Tensor, D: Tensor) -> Tensor:
    """Differentiable selective scan over ``[batch, L, C]`` sequences.

    Shapes: ``u, delta: [N, L, C]``; ``A: [C, S]``; ``Bm, Cm: [N, L, S]``; ``D: [C]``.
    Sequential over ``L``; every hidden state is kept for the backward pass.
    """
    if u.ndim != 3:
        raise DimensionError(f"scan_kernel expects u of shape [N,L,C], got {u.shape}")
    n, L, c = u.shape
    s = A.shape[-1]
    if delta.shape != u.shape or A.shape != (c, s) or Bm.shape != (n, L, s) or Cm.shape != (n, L, s) or D.shape != (c,):
        raise DimensionError(
            f"scan_kernel shapes inconsistent: u={u.shape} delta={delta.shape} A={A.shape} "
            f"B={Bm.shape} C={Cm.shape} D={D.shape}"
        )
    ud, dd, Ad, Bd, Cd, Dd = u.data, delta.data, A.data, Bm.data, Cm.data, D.data
    # time-major copies so every step of the recurrence touches contiguous memory
    ut = np.ascontiguousarray(ud.transpose(1, 0, 2))  # L,N,C
    dt = np.ascontiguousarray(dd.transpose(1, 0, 2))
    Bt = np.ascontiguousarray(Bd.transpose(1, 0, 2))  # L,N,S
    Ct = np.ascontiguousarray(Cd.transpose(1, 0, 2))
    dA = np.exp(dt[..., None] * Ad)  # L,N,C,S
    xs = (dt * ut)[..., None] * Bt[:, :, None, :]  # starts as delta*B*u, overwritten by the states
    tmp = np.empty_like(xs[0])
    for t in range(1, L):
        np.multiply(dA[t], xs[t - 1], out=tmp)
        xs[t] += tmp
    y = (np.matmul(xs, Ct[..., None])[..., 0] + ut * Dd).transpose(1, 0, 2)

    def back(gy):
        gt = np.ascontiguousarray(gy.transpose(1, 0, 2))  # L,N,C
        gCm = np.matmul(gt[:, :, None, :], xs)[:, :, 0, :]  # L,N,S
        gx = gt[..., None] * Ct[:, :, None, :]  # L,N,C,S; accumulates into dL/dx_t
        tmp = np.empty_like(gx[0])
        for t in range(L - 2, -1, -1):
            np.multiply(dA[t + 1], gx[t + 1], out=tmp)
            gx[t] += tmp
        g_dA_pre = np.zeros_like(dA)  # d/d(delta*A)
        np.multiply(gx[1:], xs[:-1], out=g_dA_pre[1:])
        g_dA_pre *= dA
        gx_B = np.matmul(gx, Bt[..., None])[..., 0]  # L,N,C
        g_delta = (g_dA_pre * Ad).sum(axis=-1) + gx_B * ut
        gA = (g_dA_pre * dt[..., None]).sum(axis=(0, 1))
        gBd = np.matmul((dt * ut)[:, :, None, :], gx)[:, :, 0, :]
        gu = gx_B * dt + gt * Dd
        gD = (gt * ut).sum(axis=(0, 1))
        return (
            gu.transpose(1, 0, 2),
            g_delta.transpose(1, 0, 2),
            gA,
            gBd.transpose(1, 0, 2),
            gCm.transpose(1, 0, 2),
            gD,
        )

    return Tensor._from_op(y, "selective_scan", (u, delta, A, Bm, Cm, D), back)


class ScanParams(Module):
    """Parameters of one selective scan: state matrix, skip term and the input-dependent
    projections producing delta, B and C."""

    def __init__(
        self, channels: int, state_dim: int, rng: np.random.Generator, dt_min: float = 1e-3, dt_max: float = 0.1
    ):
        self.state_dim = state_dim
        # S4D-real initialisation: A[c, n] = -(n + 1)
        self.A_log = parameter(np.log(np.tile(np.arange(1, state_dim + 1, dtype=np.float64), (channels, 1))))
        self.D = parameter(np.ones(channels))
        self.proj_delta = Linear(channels, channels, rng)
        # delta starts log-uniform in [dt_min, dt_max] via the inverse softplus of the bias
        dt = np.exp(rng.uniform(np.log(dt_min), np.log(dt_max), size=channels))
        self.proj_delta.weight.data *= 0.1
        self.proj_delta.bias.data = (dt + np.log(-np.expm1(-dt))).astype(np.float32)
        self.proj_B = Linear(channels, state_dim, rng, bias=False)
        self.proj_C = Linear(channels, state_dim, rng, bias=False)

    def A(self) -> Tensor:
        return ad.neg(ad.exp(self.A_log))

    def project(self, u: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        return ad.softplus(self.proj_delta(u)), self.proj_B(u), self.proj_C(u)


def selective_scan_1d(u: Tensor, params: ScanParams) -> Tensor:
    """Scan ``u`` of shape ``[L, C]`` or ``[N, L, C]``; output has the same shape."""
    squeeze = u.ndim == 2
    if squeeze:
        u = ad.reshape(u, (1,) + u.shape)
    if u.ndim != 3 or u.shape[1] < 1:
        raise DimensionError(f"selective_scan_1d expects [L,C] or [N,L,C] with L >= 1, got {u.shape}")
    delta, Bm, Cm = params.project(u)
    y = scan_kernel(u, delta, params.A(), Bm, Cm, params.D)
    return ad.reshape(y, y.shape[1:]) if squeeze else y


def scan_orders(h: int, w: int) -> List[np.ndarray]:
    """Flat row-major indices visited by each of the four scan directions:
    row-major forward, row-major reverse, column-major forward, column-major reverse."""
    row = np.arange(h * w)
    col = np.arange(h * w).reshape(h, w).T.reshape(-1)
    return [row, row[::-1].copy(), col, col[::-1].copy()]


def cross_scan(F: Tensor) -> List[Tensor]:
    """Unroll ``[B,H,W,C]`` into four ``[B,H*W,C]`` sequences."""
    if F.ndim != 4:
        raise DimensionError(f"cross_scan expects [B,H,W,C], got {F.shape}")
    b, h, w, c = F.shape
    flat = ad.reshape(F, (b, h * w, c))
    return [ad.take(flat, order, axis=1) for order in scan_orders(h, w)]


def cross_merge(ys: Sequence[Tensor], h: int, w: int) -> Tensor:
    """Fold the four direction outputs back to ``[B,H,W,C]`` and sum them."""
    ys = list(ys)
    if len(ys) != 4:
        raise DimensionError(f"cross_merge expects four sequences, got {len(ys)}")
    shape = ys[0].shape
    for y in ys[1:]:
        if y.shape != shape:
            raise DimensionError(f"cross_merge: sequence shapes differ, {shape} vs {y.shape}")
    b, L, c = shape
    if L != h * w:
        raise DimensionError(f"cross_merge: length {L} does not match {h}x{w}")
    total = None
    for y, order in zip(ys, scan_orders(h, w)):
        back = ad.take(y, np.argsort(order), axis=1)
        total = back if total is None else total + back
    return ad.reshape(total, (b, h, w, c))


def ss2d(F: Tensor, params: ScanParams) -> Tensor:
    """2-D selective scan: one parameter set shared by all four directions."""
    b, h, w, c = F.shape
    seqs = cross_scan(F)
    stacked = ad.concat(seqs, axis=0)  # 4B, L, C
    y = selective_scan_1d(stacked, params)
    parts = [y[i * b : (i + 1) * b] for i in range(4)]
    return cross_merge(parts, h, w)
