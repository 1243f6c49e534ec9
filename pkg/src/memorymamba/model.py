"""MemoryMamba backbone: patch embedding, Mem-SSM blocks grouped into stages with
patch merging in between, and a pooled MLP classifier."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .errors import ConfigurationError
from .fusion import fuse
from .memory import MemoryBank, QueryConv, memory_encode
from .nn import MLP, Conv2d, LayerNorm, Linear, Module
from .scan import ScanParams, ss2d


class PatchEmbed(Module):
    """4x4 stride-4 convolution followed by layer norm: ``[B,H,W,3] -> [B,H/4,W/4,C]``."""

    def __init__(self, in_channels: int, dim: int, rng: np.random.Generator):
        self.conv = Conv2d(in_channels, dim, 4, rng, stride=4)
        self.norm = LayerNorm(dim)

    def __call__(self, image: Tensor) -> Tensor:
        if image.ndim != 4 or image.shape[1] % 4 or image.shape[2] % 4:
            raise ConfigurationError(f"patch embedding needs [B,H,W,C] with H, W divisible by 4, got {image.shape}")
        return self.norm(self.conv(image))


class PatchMerging(Module):
    """Concatenate each 2x2 neighbourhood (4C channels), project to the next width, normalise."""

    def __init__(self, dim: int, out_dim: int, rng: np.random.Generator):
        self.reduction = Linear(4 * dim, out_dim, rng, bias=False)
        self.norm = LayerNorm(out_dim)

    def __call__(self, F: Tensor) -> Tensor:
        _, h, w, _ = F.shape
        if h % 2 or w % 2:
            raise ConfigurationError(f"patch merging needs even spatial extents, got {h}x{w}")
        parts = [F[:, i::2, j::2, :] for i, j in ((0, 0), (1, 0), (0, 1), (1, 1))]
        return self.norm(self.reduction(ad.concat(parts, axis=-1)))


@dataclass
class BlockAux:
    """Per-block tensors consumed by the memory losses."""

    h_c: Optional[Tensor]
    z: Tensor
    M_f: Optional[Tensor]


class MemSSMBlock(Module):
    def __init__(self, dim: int, cfg: ModelConfig, rng: np.random.Generator):
        self.linear_in = Linear(dim, dim, rng)
        if cfg.use_cmn or cfg.use_fmn:
            self.mem_query_conv = QueryConv(dim, rng)
        self.mem_coarse = MemoryBank(cfg.mem_coarse_size, dim, rng) if cfg.use_cmn else None
        if cfg.use_fmn:
            self.mem_fine = MemoryBank(cfg.mem_fine_size, dim, rng)
            # projection applied to the fine readout before the InfoNCE similarity; an output
            # bias would shift each row of similarities uniformly and never receive gradient
            self.mem_fine.proj = MLP(dim, dim, dim, rng, out_bias=False)
        else:
            self.mem_fine = None
        self.scan = ScanParams(dim, cfg.state_dim, rng, cfg.dt_min, cfg.dt_max)
        self.norm = LayerNorm(dim)
        self.linear_out = Linear(dim, dim, rng) if cfg.post_linear else None
        self._similarity = cfg.similarity
        self._use_fusion = cfg.use_fusion

    def __call__(self, F_prev: Tensor):
        Z = self.linear_in(F_prev)
        z = ad.global_avg_pool(Z)
        if self.mem_coarse is not None or self.mem_fine is not None:
            mem = memory_encode(Z, self.mem_query_conv, self.mem_coarse, self.mem_fine)
        else:
            mem = None
        if mem is not None and self._use_fusion:
            F_bar = fuse(mem.M_c, mem.M_f, Z, self._similarity)
        else:
            F_bar = Z
        S = ss2d(F_bar, self.scan)
        out = F_prev + self.norm(S)
        if self.linear_out is not None:
            out = self.linear_out(out)
        aux = BlockAux(mem.h_c if mem else None, z, mem.M_f if mem else None)
        return out, aux


@dataclass
class ForwardOutputs:
    logits: Tensor
    p: Tensor
    aux: List[BlockAux] = field(default_factory=list)


class MemoryMamba(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self._cfg = cfg
        rng = np.random.default_rng(seed)
        self.patch_embed = PatchEmbed(cfg.in_channels, cfg.stage_dims[0], rng)
        idx = 0
        self._stages = []
        for s, (depth, dim) in enumerate(zip(cfg.stage_depths, cfg.stage_dims)):
            names = []
            for _ in range(depth):
                setattr(self, f"block{idx}", MemSSMBlock(dim, cfg, rng))
                names.append(f"block{idx}")
                idx += 1
            down = None
            if s + 1 < len(cfg.stage_dims):
                down = f"downsample{s}"
                setattr(self, down, PatchMerging(dim, cfg.stage_dims[s + 1], rng))
            self._stages.append((names, down))
        self.head = MLP(cfg.stage_dims[-1], cfg.head_hidden, cfg.num_classes, rng)

    @property
    def config(self) -> ModelConfig:
        return self._cfg

    def blocks(self) -> List[MemSSMBlock]:
        return [getattr(self, n) for names, _ in self._stages for n in names]

    def features(self, images: Tensor):
        cfg = self._cfg
        if images.ndim != 4 or images.shape[1:] != (cfg.image_size, cfg.image_size, cfg.in_channels):
            raise ConfigurationError(
                f"expected images [B,{cfg.image_size},{cfg.image_size},{cfg.in_channels}], got {images.shape}"
            )
        F = self.patch_embed(images)
        aux = []
        for names, down in self._stages:
            for n in names:
                F, a = getattr(self, n)(F)
                aux.append(a)
            if down is not None:
                F = getattr(self, down)(F)
        return F, aux

    def classify(self, F_N: Tensor):
        logits = self.head(ad.global_avg_pool(F_N))
        return logits, ad.softmax(logits, axis=-1)

    def __call__(self, images) -> ForwardOutputs:
        if not isinstance(images, Tensor):
            images = Tensor(np.asarray(images, dtype=self.patch_embed.conv.weight.dtype))
        F, aux = self.features(images)
        logits, p = self.classify(F)
        return ForwardOutputs(logits, p, aux)

    forward = __call__
