"""Classification, coarse-memory contrastive and fine-memory InfoNCE losses."""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import LossConfig, ModelConfig
from .errors import ContractError, NumericError
from .fusion import similarity
from .model import ForwardOutputs, MemoryMamba
from .nn import MLP


def _zero(like: Tensor) -> Tensor:
    return Tensor(np.zeros((), dtype=like.dtype))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[b, y_b]`` (log-sum-exp form)."""
    labels = np.asarray(labels, dtype=np.intp)
    b = logits.shape[0]
    if labels.shape != (b,):
        raise ContractError(f"expected {b} labels, got shape {labels.shape}")
    logp = ad.log_softmax(logits, axis=-1)
    return ad.neg(ad.mean(logp[np.arange(b), labels]))


def pairwise_similarity(x: Tensor, kind: str) -> Tensor:
    """``[K, d] -> [K, K]`` similarity matrix; ``dot`` is the plain inner product."""
    if kind == "dot":
        return ad.matmul(x, ad.transpose(x))
    return similarity(ad.reshape(x, (x.shape[0], 1, x.shape[1])), ad.reshape(x, (1,) + x.shape), kind)


def class_means(h: Tensor, labels) -> Optional[Tensor]:
    """Per-class mean rows of ``h`` for the classes present in ``labels`` (sorted)."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    avg = (labels[None, :] == classes[:, None]).astype(h.dtype)
    avg /= avg.sum(axis=1, keepdims=True)
    return ad.matmul(Tensor(avg), h)


def contrastive_coarse(
    h_c: Tensor, labels, delta: float = 0.5, hinge_form: str = "separating", kind: str = "cosine"
) -> Tensor:
    """Hinge over every ordered pair of distinct per-class coarse queries.

    ``separating``: ``max(0, s - delta)`` pushes classes apart;
    ``as_printed``: ``max(0, delta - s)``. For the distance kinds (``l1``/``l2``,
    ``s = -distance``) the margin is read as a distance, i.e. ``-delta`` on the
    similarity scale. Normalised by the number of ordered pairs; 0 when fewer
    than two classes are present.
    """
    present = np.unique(np.asarray(labels))
    if present.size < 2:
        return _zero(h_c)
    means = class_means(h_c, labels)
    if kind == "cosine" and np.any(np.linalg.norm(means.data, axis=-1) == 0):
        raise NumericError("contrastive_coarse: zero-norm class query vector")
    sims = pairwise_similarity(means, kind)
    margin = delta if kind in ("cosine", "dot") else -delta
    if hinge_form == "separating":
        hinge = ad.relu(sims - margin)
    elif hinge_form == "as_printed":
        hinge = ad.relu(ad.neg(sims) + margin)
    else:
        raise ContractError(f"unknown hinge form {hinge_form!r}")
    k = present.size
    off = Tensor((1.0 - np.eye(k)).astype(h_c.dtype))
    return ad.scale(ad.sum(hinge * off), 1.0 / (k * (k - 1)))


def info_nce(z: Tensor, M_f: Tensor, projection: Optional[MLP] = None, kind: str = "dot") -> Tensor:
    """InfoNCE with in-batch negatives.

    Sample ``b``'s positive is its own projected fine readout; the other ``B - 1``
    readouts are its negatives. No temperature.
    """
    b = z.shape[0]
    if b < 2:
        raise ContractError("info_nce needs a batch of at least 2 samples for negatives")
    m = projection(M_f) if projection is not None else M_f
    if kind == "dot":
        sims = ad.matmul(z, ad.transpose(m))
    else:
        sims = similarity(ad.reshape(z, (b, 1, z.shape[1])), ad.reshape(m, (1,) + m.shape), kind)
    return cross_entropy(sims, np.arange(b))


def info_nce_from_sims(sims: Tensor) -> Tensor:
    """InfoNCE given a precomputed ``[B, B]`` similarity matrix (positives on the diagonal)."""
    return cross_entropy(sims, np.arange(sims.shape[0]))


def total_loss(cls: Tensor, contrastive: Tensor, nce: Tensor, cfg: LossConfig) -> Tensor:
    for name, t in (("classification", cls), ("contrastive", contrastive), ("nce", nce)):
        if not np.all(np.isfinite(t.data)):
            raise NumericError(f"non-finite {name} loss component")
    return cls + ad.scale(contrastive, cfg.lambda_c) + ad.scale(nce, cfg.lambda_f)


def _mean(terms: Sequence[Tensor], like: Tensor) -> Tensor:
    if not terms:
        return _zero(like)
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return ad.scale(acc, 1.0 / len(terms))


def compute_losses(
    model: MemoryMamba, out: ForwardOutputs, labels, cfg: LossConfig
) -> Dict[str, Tensor]:
    """All loss components for one batch; memory terms are averaged over blocks and
    absent when the corresponding memory network is disabled."""
    mcfg: ModelConfig = model.config
    cls = cross_entropy(out.logits, labels)
    contrast_kind = cfg.memory_similarity or "cosine"
    nce_kind = cfg.memory_similarity or "dot"
    con_terms: List[Tensor] = []
    nce_terms: List[Tensor] = []
    for block, aux in zip(model.blocks(), out.aux):
        if mcfg.use_cmn and aux.h_c is not None:
            con_terms.append(contrastive_coarse(aux.h_c, labels, cfg.delta, cfg.hinge_form, contrast_kind))
        if mcfg.use_fmn and aux.M_f is not None and aux.z.shape[0] >= 2:
            nce_terms.append(info_nce(aux.z, aux.M_f, block.mem_fine.proj, nce_kind))
    contrastive = _mean(con_terms, cls)
    nce = _mean(nce_terms, cls)
    total = total_loss(cls, contrastive, nce, cfg)
    return {"cls": cls, "contrastive": contrastive, "nce": nce, "total": total}
