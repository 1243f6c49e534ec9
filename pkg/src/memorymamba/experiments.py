"""Ablation and hyper-parameter sweep grids built on :func:`train`."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

from .config import FUSION_SIMILARITIES, MEMORY_SIMILARITIES, RunConfig
from .data import DatasetManifest, load_split
from .errors import ConfigurationError
from .metrics import csv_row, write_csv
from .model import MemoryMamba
from .train import TrainResult, check_classes, train

log = logging.getLogger(__name__)

# row order of the published ablation table
ABLATION_VARIANTS: Tuple[Tuple[str, Dict[str, bool]], ...] = (
    ("MemoryMamba", {"use_cmn": True, "use_fmn": True, "use_fusion": True}),
    ("w/o CMN", {"use_cmn": False, "use_fmn": True, "use_fusion": True}),
    ("w/o FMN", {"use_cmn": True, "use_fmn": False, "use_fusion": True}),
    ("w/o Fusion", {"use_cmn": True, "use_fmn": True, "use_fusion": False}),
    ("w/o CMN, Fusion", {"use_cmn": False, "use_fmn": True, "use_fusion": False}),
    ("w/o FMN, Fusion", {"use_cmn": True, "use_fmn": False, "use_fusion": False}),
    ("w/o CMN, FMN, Fusion", {"use_cmn": False, "use_fmn": False, "use_fusion": False}),
)

# axis -> (config section, key, value parser)
SWEEP_AXES: Dict[str, Tuple[str, str, Callable[[str], object]]] = {
    "coarse_mem": ("model", "mem_coarse_size", int),
    "fine_mem": ("model", "mem_fine_size", int),
    "fusion_sim": ("fusion", "similarity", str),
    "mem_sim": ("loss", "memory_similarity", str),
}
SWEEP_COLUMNS = ("axis", "value", "acc", "prec", "rec", "f1")


def variant_slug(name: str) -> str:
    return name.lower().replace("w/o ", "no_").replace(", ", "_").replace(" ", "_")


def variant_config(cfg: RunConfig, flags: Dict[str, bool]) -> RunConfig:
    return cfg.replace(variant=dict(flags))


def expected_parameter_prefixes(cfg: RunConfig) -> Dict[str, bool]:
    """Which memory sub-module names must (True) or must not (False) appear in every block."""
    m = cfg.model
    return {
        "mem_coarse.": m.use_cmn,
        "mem_fine.": m.use_fmn,
        "mem_query_conv.": m.use_cmn or m.use_fmn,
    }


def structural_violations(cfg: RunConfig, names: Iterable[str]) -> List[str]:
    """Differences between a parameter-name set and what the variant flags imply."""
    names = set(names)
    problems = []
    block_names = [f"block{i}." for i in range(cfg.model.num_blocks)]
    for prefix, wanted in expected_parameter_prefixes(cfg).items():
        for blk in block_names:
            present = any(n.startswith(blk + prefix) for n in names)
            if present != wanted:
                problems.append(f"{blk}{prefix}* {'missing' if wanted else 'unexpected'}")
    reference: Set[str] = set(MemoryMamba(cfg.model, seed=cfg.seed).state_dict())
    if names != reference:
        problems.append(f"name set differs from the model definition: {sorted(names ^ reference)[:5]}")
    return problems


def _load(cfg: RunConfig, manifest: DatasetManifest):
    size = cfg.model.image_size
    return (*load_split(manifest, "train", size), *load_split(manifest, "test", size))


def _run_many(jobs: Sequence[Tuple[RunConfig, Optional[Path]]], manifest, data, parallel: int) -> List[TrainResult]:
    def one(job):
        cfg, out = job
        return train(cfg, manifest, out, log=log.info, data=data)

    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(one, jobs))
    return [one(j) for j in jobs]


def run_ablation(
    cfg: RunConfig,
    manifest: DatasetManifest,
    out_dir: Optional[Union[str, Path]] = None,
    variants: Optional[Sequence[str]] = None,
    parallel: int = 1,
) -> List[Dict[str, str]]:
    """Train the full model and its ablations from scratch with the same seed and
    data order; returns (and writes ``ablation.csv``) one row per variant in table order."""
    check_classes(cfg, manifest)
    known = [name for name, _ in ABLATION_VARIANTS]
    chosen = known if variants is None else list(variants)
    unknown = [v for v in chosen if v not in known]
    if unknown:
        raise ConfigurationError(f"unknown ablation variant(s) {unknown}; choose from {known}")
    selected = [(n, f) for n, f in ABLATION_VARIANTS if n in chosen]
    out = Path(out_dir) if out_dir is not None else None
    data = _load(cfg, manifest)
    jobs = [(variant_config(cfg, flags), out / variant_slug(name) if out else None) for name, flags in selected]
    results = _run_many(jobs, manifest, data, parallel)
    dataset = Path(manifest.root).name
    rows = [csv_row(r.test_report, name, dataset) for (name, _), r in zip(selected, results)]
    if out is not None:
        write_csv(rows, out / "ablation.csv")
    return rows


def parse_sweep_values(axis: str, text: Union[str, Sequence[str]]) -> List[object]:
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    _, _, parse = SWEEP_AXES[axis]
    items = [v.strip() for v in (text.split(",") if isinstance(text, str) else text) if v.strip()]
    if not items:
        raise ConfigurationError("sweep needs at least one value")
    values = []
    for item in items:
        try:
            value = parse(item)
        except ValueError:
            raise ConfigurationError(f"sweep axis {axis} takes integers, got {item!r}") from None
        if parse is int and value < 1:
            raise ConfigurationError(f"sweep axis {axis}: memory size must be >= 1, got {value}")
        allowed = FUSION_SIMILARITIES if axis == "fusion_sim" else MEMORY_SIMILARITIES if axis == "mem_sim" else None
        if allowed and value not in allowed:
            raise ConfigurationError(f"sweep axis {axis} takes one of {', '.join(allowed)}, got {item!r}")
        values.append(value)
    return values


def run_sweep(
    cfg: RunConfig,
    manifest: DatasetManifest,
    axis: str,
    values: Sequence[object],
    out_dir: Optional[Union[str, Path]] = None,
    parallel: int = 1,
) -> List[Dict[str, str]]:
    """One training run per value along ``axis``; rows carry test acc/prec/rec/f1."""
    check_classes(cfg, manifest)
    values = parse_sweep_values(axis, [str(v) for v in values])
    section, key, _ = SWEEP_AXES[axis]
    out = Path(out_dir) if out_dir is not None else None
    data = _load(cfg, manifest)
    jobs = [(cfg.replace(**{section: {key: v}}), out / f"{axis}_{v}" if out else None) for v in values]
    results = _run_many(jobs, manifest, data, parallel)
    rows = []
    for v, r in zip(values, results):
        row = csv_row(r.test_report, "", "")
        rows.append({"axis": axis, "value": str(v), **{k: row[k] for k in ("acc", "prec", "rec", "f1")}})
    if out is not None:
        write_csv(rows, out / f"sweep_{axis}.csv", SWEEP_COLUMNS)
    return rows

