"""Straight-line numpy reimplementations used as independent oracles.

Everything here is written with explicit loops in float64 and shares no code
with the package beyond reading parameter arrays.
"""

from __future__ import annotations

import math

import numpy as np


def softplus(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def silu(x):
    return x / (1.0 + np.exp(-x))


def linear(x, lin):
    w = np.asarray(lin.weight.data, np.float64)
    y = x @ w
    return y + np.asarray(lin.bias.data, np.float64) if lin.bias is not None else y


def mlp(x, m):
    return linear(silu(linear(x, m.fc1)), m.fc2)


def scan_sequence(u, params):
    """Step-by-step recurrence for one ``[L, C]`` sequence."""
    u = np.asarray(u, np.float64)
    L, C = u.shape
    A = -np.exp(np.asarray(params.A_log.data, np.float64))
    D = np.asarray(params.D.data, np.float64)
    S = A.shape[1]
    delta = softplus(linear(u, params.proj_delta))
    Bm = linear(u, params.proj_B)
    Cm = linear(u, params.proj_C)
    x = np.zeros((C, S))
    y = np.zeros((L, C))
    for t in range(L):
        for c in range(C):
            for n in range(S):
                x[c, n] = math.exp(delta[t, c] * A[c, n]) * x[c, n] + delta[t, c] * Bm[t, n] * u[t, c]
            y[t, c] = sum(Cm[t, n] * x[c, n] for n in range(S)) + D[c] * u[t, c]
    return y


def ss2d(F, params):
    """Four directional scans over a ``[B, H, W, C]`` map, folded back and summed."""
    F = np.asarray(F, np.float64)
    b, h, w, c = F.shape
    row = [(i, j) for i in range(h) for j in range(w)]
    col = [(i, j) for j in range(w) for i in range(h)]
    out = np.zeros_like(F)
    for n in range(b):
        for path in (row, row[::-1], col, col[::-1]):
            seq = np.stack([F[n, i, j] for i, j in path])
            y = scan_sequence(seq, params)
            for k, (i, j) in enumerate(path):
                out[n, i, j] += y[k]
    return out


def layernorm(x, weight, bias, eps):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * weight + bias


def conv2d_same(x, conv):
    """3x3 padding-1 convolution on ``[B, H, W, C]`` with explicit loops."""
    w = np.asarray(conv.weight.data, np.float64)
    bias = np.asarray(conv.bias.data, np.float64)
    b, h, wd, cin = x.shape
    cout, _, kh, kw = w.shape
    p = kh // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    out = np.zeros((b, h, wd, cout))
    for n in range(b):
        for i in range(h):
            for j in range(wd):
                patch = xp[n, i : i + kh, j : j + kw, :]
                for o in range(cout):
                    out[n, i, j, o] = np.sum(patch * w[o].transpose(1, 2, 0)) + bias[o]
    return out


def softmax_rows(h):
    e = np.exp(h - h.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cosine(a, b):
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
