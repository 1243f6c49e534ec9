"""Training and inference loops."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .autodiff import Tensor
from .checkpoint import Checkpoint, save_checkpoint
from .config import RunConfig
from .data import DatasetManifest, batches, load_split
from .errors import ConfigurationError, NumericError
from .losses import compute_losses
from .metrics import MetricsReport, evaluate, write_csv, write_report
from .model import MemoryMamba
from .optim import Adam, lr_at, total_steps_for

CHECKPOINT_NAME = "checkpoint.mmck"
METRICS_NAME = "metrics.csv"
LOG_NAME = "train_log.csv"
LOG_COLUMNS = ("step", "epoch", "lr", "cls", "contrastive", "nce", "total")
METRIC_COLUMNS = ("epoch", "step", "split", "acc", "prec", "rec", "f1")
EVAL_BATCH = 64


@dataclass
class TrainResult:
    model: MemoryMamba
    steps: int
    history: List[Dict[str, str]] = field(default_factory=list)
    train_report: Optional[MetricsReport] = None
    test_report: Optional[MetricsReport] = None
    checkpoint_path: Optional[Path] = None
    checkpoint_digest: str = ""


def check_classes(cfg: RunConfig, manifest: DatasetManifest) -> None:
    if cfg.model.num_classes != len(manifest.class_names):
        raise ConfigurationError(
            f"model.num_classes is {cfg.model.num_classes} but the dataset has "
            f"{len(manifest.class_names)} classes ({', '.join(manifest.class_names)})"
        )


def predict(model: MemoryMamba, images: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    preds = []
    for start in range(0, len(images), batch_size):
        out = model(Tensor(images[start : start + batch_size]))
        preds.append(np.argmax(out.logits.data, axis=-1))
    return np.concatenate(preds)


def evaluate_split(model: MemoryMamba, images: np.ndarray, labels: np.ndarray) -> MetricsReport:
    return evaluate(predict(model, images), labels, model.config.num_classes)


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _metric_row(epoch: int, step: int, split: str, r: MetricsReport) -> Dict[str, str]:
    return {
        "epoch": str(epoch),
        "step": str(step),
        "split": split,
        "acc": f"{r.acc:.6f}",
        "prec": f"{r.macro_prec:.6f}",
        "rec": f"{r.macro_rec:.6f}",
        "f1": f"{r.macro_f1:.6f}",
    }


def train(
    cfg: RunConfig,
    manifest: DatasetManifest,
    out_dir: Optional[Union[str, Path]] = None,
    log: Optional[Callable[[str], None]] = None,
    data: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = None,
) -> TrainResult:
    """Train from scratch under ``cfg``.

    With ``out_dir`` set, writes the checkpoint, per-epoch metrics CSV and the
    per-step loss log there. ``data`` may supply preloaded
    ``(train_x, train_y, test_x, test_y)`` arrays to skip decoding.
    """
    cfg.validate()
    check_classes(cfg, manifest)
    say = log or (lambda _msg: None)
    if data is None:
        size = cfg.model.image_size
        data = (*load_split(manifest, "train", size), *load_split(manifest, "test", size))
    train_x, train_y, test_x, test_y = data

    model = MemoryMamba(cfg.model, seed=cfg.seed)
    opt = Adam(model.named_parameters(), cfg.optim, model.decay_flags())
    total = total_steps_for(len(train_y), cfg.optim)
    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = (out / LOG_NAME).open("w", newline="")
        log_writer = csv.DictWriter(log_fh, fieldnames=LOG_COLUMNS, lineterminator="\n")
        log_writer.writeheader()

    result = TrainResult(model=model, steps=0)
    step = 0
    try:
        for epoch in range(cfg.optim.epochs):
            for xb, yb in batches(train_x, train_y, cfg.optim.batch_size, cfg.seed, epoch):
                # update k (1-based) uses the schedule value at k
                step += 1
                lr = lr_at(step, total, cfg.optim)
                outputs = model(Tensor(xb))
                try:
                    losses = compute_losses(model, outputs, yb, cfg.loss)
                except NumericError as exc:
                    raise NumericError(f"step {step}: {exc}") from None
                if not np.isfinite(losses["total"].data):
                    raise NumericError(f"step {step}: non-finite total loss")
                model.zero_grad()
                losses["total"].backward()
                opt.step(lr)
                if log_fh is not None:
                    row = {k: _fmt(float(v.data)) for k, v in losses.items()}
                    log_writer.writerow(dict(row, step=step, epoch=epoch, lr=_fmt(lr)))
                    log_fh.flush()
            if cfg.optim.eval_train:
                result.train_report = evaluate_split(model, train_x, train_y)
                result.history.append(_metric_row(epoch, step, "train", result.train_report))
            result.test_report = evaluate_split(model, test_x, test_y)
            result.history.append(_metric_row(epoch, step, "test", result.test_report))
            tail = f"train acc {result.train_report.acc:.4f} " if cfg.optim.eval_train else ""
            say(f"epoch {epoch + 1}/{cfg.optim.epochs} step {step} {tail}test acc {result.test_report.acc:.4f}")
    finally:
        if log_fh is not None:
            log_fh.close()

    result.steps = step
    if out is not None:
        write_csv(result.history, out / METRICS_NAME, METRIC_COLUMNS)
        write_report(result.test_report, out / "report_test.csv", "csv", dataset=Path(manifest.root).name)
        write_report(result.test_report, out / "report_test.json", "json", dataset=Path(manifest.root).name)
        ckpt = Checkpoint(
            config=cfg,
            params=model.state_dict(),
            optim=opt.state(),
            step=step,
            seed=cfg.seed,
            extra={"class_names": manifest.class_names},
        )
        result.checkpoint_path = out / CHECKPOINT_NAME
        result.checkpoint_digest = save_checkpoint(ckpt, result.checkpoint_path)
    return result
