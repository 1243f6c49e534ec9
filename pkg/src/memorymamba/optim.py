"""Adam with decoupled weight decay, and the linear warmup / linear decay schedule."""

from __future__ import annotations

import math
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from .autodiff import Tensor
from .config import OptimConfig
from .errors import ContractError


def warmup_steps(total_steps: int, cfg: OptimConfig) -> int:
    # round half up; Python's round() is banker's rounding
    return int(math.floor(cfg.warmup_fraction * total_steps + 0.5))


def lr_at(step: float, total_steps: int, cfg: OptimConfig) -> float:
    """Rise linearly 0 -> base_lr over the warmup steps, then fall linearly to 0 at ``total_steps``."""
    if total_steps < 1:
        raise ContractError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    w = warmup_steps(total_steps, cfg)
    if w > 0 and step <= w:
        return cfg.base_lr * step / w
    return cfg.base_lr * (total_steps - step) / (total_steps - w)


def total_steps_for(train_size: int, cfg: OptimConfig) -> int:
    return cfg.epochs * math.ceil(train_size / cfg.batch_size)


class Adam:
    """Adam with bias correction; weight decay is applied to the parameter directly
    (``p -= lr * wd * p``) before the moment update, and only to parameters whose
    decay flag is set."""

    def __init__(self, named_params: Iterable[Tuple[str, Tensor]], cfg: OptimConfig, decay: Optional[Dict[str, bool]] = None):
        self.params = dict(named_params)
        self.cfg = cfg
        self.decay = {n: True for n in self.params} if decay is None else {n: decay.get(n, True) for n in self.params}
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.step_count = 0

    def step(self, lr: float) -> None:
        self.step_count += 1
        adam_step(self.params, {n: p.grad for n, p in self.params.items()}, (self.m, self.v), self.step_count, lr, self.cfg, self.decay)

    def state(self) -> Dict[str, np.ndarray]:
        out = {}
        for n in self.params:
            out[f"optim.m.{n}"] = self.m[n]
            out[f"optim.v.{n}"] = self.v[n]
        return out

    def load_state(self, state: Dict[str, np.ndarray], step_count: int) -> None:
        for n in self.params:
            self.m[n] = np.array(state[f"optim.m.{n}"], dtype=self.params[n].dtype)
            self.v[n] = np.array(state[f"optim.v.{n}"], dtype=self.params[n].dtype)
        self.step_count = step_count


def adam_step(
    params: Dict[str, Tensor],
    grads: Dict[str, Optional[np.ndarray]],
    moments: Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]],
    step: int,
    lr: float,
    cfg: OptimConfig,
    decay: Optional[Dict[str, bool]] = None,
) -> None:
    """Update ``params`` and ``moments`` in place. A missing gradient counts as zero."""
    if step < 1:
        raise ContractError("adam step counter starts at 1")
    m_all, v_all = moments
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        m, v = m_all[name], v_all[name]
        if cfg.weight_decay and (decay is None or decay.get(name, True)):
            p.data -= (lr * cfg.weight_decay) * p.data
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.dtype, copy=False)
