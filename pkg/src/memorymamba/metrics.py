"""Confusion-matrix metrics and report files."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np

from .errors import ContractError, DataError

REPORT_VERSION = 1
CSV_COLUMNS = ("method", "dataset", "acc", "prec", "rec", "f1")


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


@dataclass
class MetricsReport:
    confusion: np.ndarray  # rows = true class, cols = predicted class
    acc: float
    macro_prec: float
    macro_rec: float
    macro_f1: float
    micro_prec: float
    micro_rec: float
    micro_f1: float
    per_class: List[Dict[str, float]] = field(default_factory=list)
    num_samples: int = 0

    def to_dict(self) -> dict:
        return {
            "report_version": REPORT_VERSION,
            "num_samples": self.num_samples,
            "acc": self.acc,
            "macro": {"prec": self.macro_prec, "rec": self.macro_rec, "f1": self.macro_f1},
            "micro": {"prec": self.micro_prec, "rec": self.micro_rec, "f1": self.micro_f1},
            "per_class": self.per_class,
            "confusion": self.confusion.tolist(),
        }


def evaluate(predictions: Sequence[int], truths: Sequence[int], num_classes: int) -> MetricsReport:
    """Accuracy plus macro/micro precision, recall and F1.

    A class whose precision (or recall) has a zero denominator scores 0 for it;
    it is not dropped from the macro mean.
    """
    pred = np.asarray(predictions, dtype=np.int64).reshape(-1)
    true = np.asarray(truths, dtype=np.int64).reshape(-1)
    if pred.size != true.size:
        raise ContractError(f"{pred.size} predictions for {true.size} truths")
    if pred.size == 0:
        raise ContractError("cannot evaluate zero samples")
    if pred.min() < 0 or true.min() < 0 or pred.max() >= num_classes or true.max() >= num_classes:
        raise ContractError(f"labels must lie in [0, {num_classes})")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (true, pred), 1)
    tp = np.diag(confusion).astype(np.float64)
    pred_tot = confusion.sum(axis=0).astype(np.float64)
    true_tot = confusion.sum(axis=1).astype(np.float64)
    prec = _safe_div(tp, pred_tot)
    rec = _safe_div(tp, true_tot)
    f1 = _safe_div(2 * prec * rec, prec + rec)
    n = int(pred.size)
    acc = float(tp.sum() / n)
    per_class = [
        {"class": k, "prec": float(prec[k]), "rec": float(rec[k]), "f1": float(f1[k]), "support": int(true_tot[k])}
        for k in range(num_classes)
    ]
    # single-label micro averages all coincide with accuracy
    return MetricsReport(
        confusion=confusion,
        acc=acc,
        macro_prec=float(prec.mean()),
        macro_rec=float(rec.mean()),
        macro_f1=float(f1.mean()),
        micro_prec=acc,
        micro_rec=acc,
        micro_f1=acc,
        per_class=per_class,
        num_samples=n,
    )


def csv_row(report: MetricsReport, method: str, dataset: str) -> Dict[str, str]:
    return {
        "method": method,
        "dataset": dataset,
        "acc": f"{report.acc:.4f}",
        "prec": f"{report.macro_prec:.4f}",
        "rec": f"{report.macro_rec:.4f}",
        "f1": f"{report.macro_f1:.4f}",
    }


def write_csv(rows: Sequence[Dict[str, str]], path: Union[str, Path], columns: Sequence[str] = CSV_COLUMNS) -> Path:
    if not rows:
        raise DataError("refusing to write an empty metrics table")
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from None
    return path


def read_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_report(
    report: MetricsReport, path: Union[str, Path], fmt: str = "csv", method: str = "MemoryMamba", dataset: str = ""
) -> Path:
    """Write one report as a CSV row (``fmt="csv"``) or as JSON with the full confusion matrix."""
    if report is None or report.num_samples == 0:
        raise DataError("refusing to write an empty report")
    path = Path(path)
    if fmt == "csv":
        return write_csv([csv_row(report, method, dataset)], path)
    if fmt in ("json", "structured-text"):
        body = dict(report.to_dict(), method=method, dataset=dataset)
        try:
            path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        except OSError as exc:
            raise DataError(f"cannot write {path}: {exc}") from None
        return path
    raise ContractError(f"unknown report format {fmt!r}")
