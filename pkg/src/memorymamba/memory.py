"""Coarse- and fine-grained memory networks.

A block's intermediate features are convolved, pooled and mapped by one MLP per
bank to a query over that bank's slots; the softmax of the query weights the
slot rows into one aggregated memory vector per sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError
from .nn import MLP, Conv2d, Module, parameter


class MemoryBank(Module):
    """Learnable ``[n_slots, d_slot]`` slot matrix plus the MLP that queries it."""

    def __init__(self, n_slots: int, d_slot: int, rng: np.random.Generator, query_hidden: Optional[int] = None):
        if n_slots < 1:
            raise ConfigurationError(f"memory bank needs at least one slot, got {n_slots}")
        self.slots = parameter(rng.normal(0.0, 1.0 / np.sqrt(d_slot), size=(n_slots, d_slot)))
        self.query = MLP(d_slot, query_hidden or d_slot, n_slots, rng)

    @property
    def n_slots(self) -> int:
        return self.slots.shape[0]

    @property
    def d_slot(self) -> int:
        return self.slots.shape[1]


class QueryConv(Module):
    """3x3 convolution shared by both banks' queries."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.conv = Conv2d(channels, channels, 3, rng, padding=1)

    def __call__(self, Z: Tensor) -> Tensor:
        return self.conv(Z)


def encode_queries(Z: Tensor, conv: QueryConv, bank_c: Optional[MemoryBank], bank_f: Optional[MemoryBank]):
    """Return ``(h_c, h_f)`` of shapes ``[B, c]`` and ``[B, f]`` (``None`` for an absent bank)."""
    channels = conv.conv.weight.shape[1]
    if Z.ndim != 4 or Z.shape[-1] != channels:
        raise ConfigurationError(f"query head expects [B,H,W,{channels}], got {Z.shape}")
    pooled = ad.global_avg_pool(conv(Z))
    h_c = bank_c.query(pooled) if bank_c is not None else None
    h_f = bank_f.query(pooled) if bank_f is not None else None
    return h_c, h_f


def attention(h: Tensor) -> Tensor:
    return ad.softmax(h, axis=-1)


def aggregate(alpha: Tensor, bank: MemoryBank) -> Tensor:
    """``M_bar[b] = sum_j alpha[b, j] * slots[j]``."""
    if alpha.shape[-1] != bank.n_slots:
        raise ConfigurationError(f"attention over {alpha.shape[-1]} slots but bank holds {bank.n_slots}")
    return ad.matmul(alpha, bank.slots)


@dataclass
class MemoryReadout:
    M_c: Optional[Tensor]
    M_f: Optional[Tensor]
    h_c: Optional[Tensor]
    h_f: Optional[Tensor]


def memory_encode(Z: Tensor, conv: QueryConv, bank_c: Optional[MemoryBank], bank_f: Optional[MemoryBank]) -> MemoryReadout:
    h_c, h_f = encode_queries(Z, conv, bank_c, bank_f)
    M_c = aggregate(attention(h_c), bank_c) if bank_c is not None else None
    M_f = aggregate(attention(h_f), bank_f) if bank_f is not None else None
    return MemoryReadout(M_c, M_f, h_c, h_f)
