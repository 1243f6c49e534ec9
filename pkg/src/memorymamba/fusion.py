"""Similarity-gated fusion of aggregated memory with the intermediate feature map."""

from __future__ import annotations

from enum import Enum
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError


class SimilarityKind(str, Enum):
    """Larger is always more similar: distances enter negated."""

    COSINE = "cosine"
    NEG_L1 = "l1"
    NEG_L2 = "l2"

    @classmethod
    def parse(cls, value) -> "SimilarityKind":
        if isinstance(value, cls):
            return value
        aliases = {"neg_l1": "l1", "neg_l2": "l2"}
        try:
            return cls(aliases.get(value, value))
        except ValueError:
            raise ConfigurationError(f"unknown similarity {value!r}; expected cosine, l1 or l2") from None


def similarity(a: Tensor, b: Tensor, kind) -> Tensor:
    """Row-wise similarity along the last axis (leading axes broadcast)."""
    kind = SimilarityKind.parse(kind)
    if kind is SimilarityKind.COSINE:
        return ad.cosine_sim(a, b)
    diff = a - b
    if kind is SimilarityKind.NEG_L1:
        return ad.neg(ad.sum(ad.abs(diff), axis=-1))
    return ad.neg(ad.norm(diff, axis=-1))


def pool_inputs(M_c: Optional[Tensor], M_f: Optional[Tensor], Z: Tensor):
    """Align memory readouts with the feature map: ``(v_c, v_f, z)``.

    The readouts are already per-sample vectors and pass through unchanged; only
    the feature map is spatially averaged.
    """
    width = Z.shape[-1]
    for name, m in (("coarse", M_c), ("fine", M_f)):
        if m is not None and m.shape != (Z.shape[0], width):
            raise ConfigurationError(f"{name} memory readout {m.shape} does not match feature width {width}")
    return M_c, M_f, ad.global_avg_pool(Z)


def gate(v: Tensor, z: Tensor, kind) -> Tensor:
    """Per-sample similarity score ``beta`` of shape ``[B]``."""
    return similarity(v, z, kind)


def _masked_gate(v: Tensor, z: Tensor, kind) -> Tensor:
    # a zero readout contributes w = beta * 0 = 0 for any bounded beta; cosine is
    # undefined there, so the gate is pinned to 0 for those rows instead
    zero = np.all(v.data == 0, axis=-1)
    if not zero.any() or SimilarityKind.parse(kind) is not SimilarityKind.COSINE:
        return gate(v, z, kind)
    mask = zero.astype(v.dtype)[:, None]
    beta = gate(v + Tensor(mask), z, kind)
    return beta * Tensor(1.0 - mask[:, 0])


def fuse(M_c: Optional[Tensor], M_f: Optional[Tensor], Z: Tensor, kind="cosine") -> Tensor:
    """``F_bar[b,h,w,:] = Z[b,h,w,:] + beta_c[b] * v_c[b,:] + beta_f[b] * v_f[b,:]``."""
    v_c, v_f, z = pool_inputs(M_c, M_f, Z)
    out = Z
    b, _, _, c = Z.shape
    for v in (v_c, v_f):
        if v is None:
            continue
        beta = _masked_gate(v, z, kind)
        w = ad.reshape(ad.mul(ad.reshape(beta, (b, 1)), v), (b, 1, 1, c))
        out = out + w
    return out
