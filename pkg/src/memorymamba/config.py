"""Experiment configuration: dataclasses, TOML loading and strict validation.

Config files are TOML with the sections ``[model]``, ``[block]``, ``[fusion]``,
``[variant]``, ``[loss]`` and ``[optim]``. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import dataclasses
import difflib
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union, get_args, get_origin, get_type_hints

import tomli

from .errors import ConfigurationError

HINGE_FORMS = ("separating", "as_printed")
MEMORY_SIMILARITIES = ("cosine", "l1", "l2", "dot")
FUSION_SIMILARITIES = ("cosine", "l1", "l2")
_BLOCK_KEYS = ("post_linear", "dt_min", "dt_max")


@dataclass
class ModelConfig:
    image_size: int = 64
    in_channels: int = 3
    num_classes: int = 4
    stage_depths: List[int] = field(default_factory=lambda: [2, 2])
    stage_dims: List[int] = field(default_factory=lambda: [48, 96])
    state_dim: int = 8
    mem_coarse_size: int = 4
    mem_fine_size: int = 16
    similarity: str = "cosine"
    head_hidden: int = 128
    post_linear: bool = True
    # range of the initial scan step size delta (log-uniform)
    dt_min: float = 1e-3
    dt_max: float = 0.1
    use_cmn: bool = True
    use_fmn: bool = True
    use_fusion: bool = True

    def validate(self) -> "ModelConfig":
        if len(self.stage_depths) != len(self.stage_dims) or not self.stage_dims:
            raise ConfigurationError("model.stage_depths and model.stage_dims must be non-empty and equal length")
        if any(d < 1 for d in self.stage_depths) or any(c < 1 for c in self.stage_dims):
            raise ConfigurationError("stage depths and widths must be positive")
        if any(b <= a for a, b in zip(self.stage_dims, self.stage_dims[1:])):
            raise ConfigurationError(f"model.stage_dims must be strictly increasing, got {self.stage_dims}")
        factor = 4 * 2 ** (len(self.stage_dims) - 1)
        if self.image_size % factor:
            raise ConfigurationError(f"model.image_size {self.image_size} must be divisible by {factor}")
        for name in ("in_channels", "num_classes", "state_dim", "mem_coarse_size", "mem_fine_size", "head_hidden"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"model.{name} must be >= 1")
        if self.num_classes < 2:
            raise ConfigurationError("model.num_classes must be >= 2")
        if not 0 < self.dt_min <= self.dt_max:
            raise ConfigurationError(f"block.dt_min/dt_max must satisfy 0 < dt_min <= dt_max, got {self.dt_min}, {self.dt_max}")
        if self.similarity not in FUSION_SIMILARITIES:
            raise ConfigurationError(f"fusion.similarity must be one of {FUSION_SIMILARITIES}, got {self.similarity!r}")
        return self

    @property
    def num_blocks(self) -> int:
        return sum(self.stage_depths)


@dataclass
class LossConfig:
    lambda_c: float = 0.1
    lambda_f: float = 0.1
    delta: float = 0.5
    hinge_form: str = "separating"
    aux_aggregation: str = "mean"
    # None keeps the defaults: cosine in the contrastive hinge, dot product in InfoNCE
    memory_similarity: Optional[str] = None

    def validate(self) -> "LossConfig":
        if self.lambda_c < 0 or self.lambda_f < 0:
            raise ConfigurationError("loss.lambda_c and loss.lambda_f must be >= 0")
        if not -1 < self.delta < 1:
            raise ConfigurationError(f"loss.delta must lie in (-1, 1), got {self.delta}")
        if self.hinge_form not in HINGE_FORMS:
            raise ConfigurationError(f"loss.hinge_form must be one of {HINGE_FORMS}")
        if self.aux_aggregation != "mean":
            raise ConfigurationError("loss.aux_aggregation supports only 'mean'")
        if self.memory_similarity is not None and self.memory_similarity not in MEMORY_SIMILARITIES:
            raise ConfigurationError(f"loss.memory_similarity must be one of {MEMORY_SIMILARITIES}")
        return self


@dataclass
class OptimConfig:
    base_lr: float = 2e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 10
    batch_size: int = 64
    warmup_fraction: float = 0.05
    seed: int = 0
    # evaluate the train split at the end of every epoch (test split is always evaluated)
    eval_train: bool = True

    def validate(self) -> "OptimConfig":
        if self.base_lr <= 0:
            raise ConfigurationError("optim.base_lr must be > 0")
        if not 0 < self.warmup_fraction < 1:
            raise ConfigurationError("optim.warmup_fraction must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("optim.epochs and optim.batch_size must be >= 1")
        if self.weight_decay < 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.eps <= 0:
            raise ConfigurationError("optim.weight_decay/beta1/beta2/eps out of range")
        return self


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)

    @property
    def seed(self) -> int:
        return self.optim.seed

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.loss.validate()
        self.optim.validate()
        return self

    def to_dict(self) -> Dict[str, Any]:
        m = dataclasses.asdict(self.model)
        block = {k: m.pop(k) for k in _BLOCK_KEYS}
        fusion = {"similarity": m.pop("similarity")}
        variant = {k: m.pop(k) for k in ("use_cmn", "use_fmn", "use_fusion")}
        loss = dataclasses.asdict(self.loss)
        if loss["memory_similarity"] is None:
            del loss["memory_similarity"]
        return {
            "model": m,
            "block": block,
            "fusion": fusion,
            "variant": variant,
            "loss": loss,
            "optim": dataclasses.asdict(self.optim),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], source: Optional[str] = None) -> "RunConfig":
        return _build(data, source)

    def replace(self, **sections: Dict[str, Any]) -> "RunConfig":
        """Copy with dotted overrides, e.g. ``replace(variant={"use_cmn": False})``."""
        data = self.to_dict()
        for section, values in sections.items():
            data.setdefault(section, {}).update(values)
        return RunConfig.from_dict(data)


_SECTIONS = {
    "model": (ModelConfig, lambda f: f.name not in {*_BLOCK_KEYS, "similarity", "use_cmn", "use_fmn", "use_fusion"}),
    "block": (ModelConfig, lambda f: f.name in _BLOCK_KEYS),
    "fusion": (ModelConfig, lambda f: f.name == "similarity"),
    "variant": (ModelConfig, lambda f: f.name in {"use_cmn", "use_fmn", "use_fusion"}),
    "loss": (LossConfig, lambda f: True),
    "optim": (OptimConfig, lambda f: True),
}


def _line_of(text: Optional[str], key: str) -> str:
    if not text:
        return ""
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*=", re.MULTILINE)
    m = pattern.search(text)
    return f" (line {text.count(chr(10), 0, m.start()) + 1})" if m else ""


def _coerce(value: Any, tp: Any, where: str) -> Any:
    origin = get_origin(tp)
    if origin is Union:
        args = [a for a in get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], where)
    if origin in (list, List):
        (inner,) = get_args(tp)
        if not isinstance(value, list):
            raise ConfigurationError(f"{where}: expected a list, got {value!r}")
        return [_coerce(v, inner, where) for v in value]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{where}: expected a string, got {value!r}")
        return value
    raise TypeError(tp)


def _build(data: Dict[str, Any], text: Optional[str] = None) -> RunConfig:
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        hint = difflib.get_close_matches(unknown[0], list(_SECTIONS), n=1)
        extra = f"; did you mean [{hint[0]}]?" if hint else ""
        raise ConfigurationError(f"unknown config section [{unknown[0]}]{_line_of(text, '[' + unknown[0])}{extra}")
    values: Dict[type, Dict[str, Any]] = {ModelConfig: {}, LossConfig: {}, OptimConfig: {}}
    for section, body in data.items():
        if not isinstance(body, dict):
            raise ConfigurationError(f"config section [{section}] must be a table")
        cls, owns = _SECTIONS[section]
        hints = get_type_hints(cls)
        allowed = {f.name for f in dataclasses.fields(cls) if owns(f)}
        for key, value in body.items():
            where = f"{section}.{key}"
            if key not in allowed:
                hint = difflib.get_close_matches(key, sorted(allowed), n=1)
                extra = f"; did you mean {section}.{hint[0]}?" if hint else ""
                raise ConfigurationError(f"unknown config key {where}{_line_of(text, key)}{extra}")
            values[cls][key] = _coerce(value, hints[key], where + _line_of(text, key))
    cfg = RunConfig(
        model=ModelConfig(**values[ModelConfig]),
        loss=LossConfig(**values[LossConfig]),
        optim=OptimConfig(**values[OptimConfig]),
    )
    return cfg.validate()


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return _build(data, text)


def dumps_toml(cfg: RunConfig) -> str:
    """Render a config back to TOML (flat sections, scalars and integer lists only)."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return f'"{v}"'
        if isinstance(v, list):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(v)

    lines = []
    for section, body in cfg.to_dict().items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {fmt(v)}" for k, v in body.items())
        lines.append("")
    return "\n".join(lines)
