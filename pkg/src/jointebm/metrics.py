"""Multi-attribute predictive metrics with micro/macro averaging.

Micro-averaging pools every (example, attribute) cell into one binary task;
macro-averaging scores each attribute separately and takes the unweighted
mean. Attributes with no positives (or, for AUROC, no negatives) are
excluded from the macro average and simply pooled into micro. Calibration
uses the predicted-class convention: cell confidence is max(p, 1 - p) and a
cell is correct when thresholding p at 0.5 recovers the label.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

METRIC_NAMES = ("accuracy", "f1", "auroc", "average_precision", "ece")
DEFAULT_ECE_BINS = 20


@dataclass
class PredictionSet:
    confidences: np.ndarray
    labels: np.ndarray
    attribute_names: list[str]

    def __post_init__(self):
        self.confidences = np.atleast_2d(np.asarray(self.confidences, dtype=np.float64))
        self.labels = np.atleast_2d(np.asarray(self.labels, dtype=np.int64))
        if self.confidences.shape != self.labels.shape:
            raise ValueError("confidences and labels must have matching shapes")
        if self.confidences.shape[1] != len(self.attribute_names):
            raise ValueError("attribute name count mismatch")
        if self.confidences.size == 0:
            raise ValueError("prediction set is empty")
        if (self.confidences < 0).any() or (self.confidences > 1).any():
            raise ValueError("confidences must lie in [0, 1]")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be binary")

    @property
    def num_attributes(self) -> int:
        return self.confidences.shape[1]


def _threshold_groups(scores: np.ndarray, labels: np.ndarray):
    """Cumulative TP/FP at each distinct score, descending."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    l = labels[order]
    ends = np.append(np.flatnonzero(np.diff(s)), s.size - 1)
    tp = np.cumsum(l)[ends].astype(np.float64)
    fp = np.cumsum(1 - l)[ends].astype(np.float64)
    return s[ends], tp, fp


def _auroc_cells(scores: np.ndarray, labels: np.ndarray) -> float:
    _, tp, fp = _threshold_groups(scores, labels)
    pos, neg = tp[-1], fp[-1]
    if pos == 0 or neg == 0:
        raise ValueError("AUROC needs at least one positive and one negative")
    tpr = np.concatenate([[0.0], tp / pos])
    fpr = np.concatenate([[0.0], fp / neg])
    return float((np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0).sum())


def _ap_cells(scores: np.ndarray, labels: np.ndarray) -> float:
    _, tp, fp = _threshold_groups(scores, labels)
    pos = tp[-1]
    if pos == 0:
        raise ValueError("average precision needs at least one positive")
    precision = tp / (tp + fp)
    recall = np.concatenate([[0.0], tp / pos])
    return float((np.diff(recall) * precision).sum())


def _f1_cells(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> float:
    pred = scores >= threshold
    tp = float(np.sum(pred & (labels == 1)))
    fp = float(np.sum(pred & (labels == 0)))
    fn = float(np.sum(~pred & (labels == 1)))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom > 0 else 0.0


def _accuracy_cells(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> float:
    return float(((scores >= threshold).astype(np.int64) == labels).mean())


def _ece_cells(scores: np.ndarray, labels: np.ndarray, bins: int) -> float:
    conf = np.maximum(scores, 1.0 - scores)
    correct = (scores >= 0.5).astype(np.int64) == labels
    idx = np.minimum((conf * bins).astype(np.int64), bins - 1)
    total = scores.size
    ece = 0.0
    for b in np.unique(idx):
        sel = idx == b
        n_b = int(sel.sum())
        ece += (n_b / total) * abs(correct[sel].mean() - conf[sel].mean())
    return float(ece)


def _validate_mode(mode: str) -> None:
    if mode not in ("micro", "macro"):
        raise ValueError("mode must be 'micro' or 'macro'")


def _macro(p: PredictionSet, per_attr_fn, valid_fn=None) -> float:
    values = []
    for k in range(p.num_attributes):
        s = p.confidences[:, k]
        l = p.labels[:, k]
        if valid_fn is not None and not valid_fn(l):
            continue
        values.append(per_attr_fn(s, l))
    if not values:
        raise ValueError("no attribute is valid for this metric")
    return float(sum(values) / len(values))


def accuracy(p: PredictionSet, threshold: float = 0.5) -> float:
    """Pooled cell accuracy at the given threshold."""
    return _accuracy_cells(p.confidences.ravel(), p.labels.ravel(), threshold)


def f1(p: PredictionSet, mode: str = "micro") -> float:
    _validate_mode(mode)
    if mode == "micro":
        return _f1_cells(p.confidences.ravel(), p.labels.ravel())
    return _macro(p, _f1_cells)


def auroc(p: PredictionSet, mode: str = "micro") -> float:
    _validate_mode(mode)
    if mode == "micro":
        return _auroc_cells(p.confidences.ravel(), p.labels.ravel())
    return _macro(p, _auroc_cells, valid_fn=lambda l: 0 < l.sum() < l.size)


def average_precision(p: PredictionSet, mode: str = "micro") -> float:
    _validate_mode(mode)
    if mode == "micro":
        return _ap_cells(p.confidences.ravel(), p.labels.ravel())
    return _macro(p, _ap_cells, valid_fn=lambda l: l.sum() > 0)


def ece(p: PredictionSet, mode: str = "micro", bins: int = DEFAULT_ECE_BINS) -> float:
    _validate_mode(mode)
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if mode == "micro":
        return _ece_cells(p.confidences.ravel(), p.labels.ravel(), bins)
    return _macro(p, lambda s, l: _ece_cells(s, l, bins))


def roc_points(scores: np.ndarray, labels: np.ndarray) -> list[tuple[float, float, float]]:
    """(threshold, FPR, TPR) at every distinct threshold, plus the origin."""
    thr, tp, fp = _threshold_groups(scores, labels)
    pos, neg = tp[-1], fp[-1]
    pts = [(math.inf, 0.0, 0.0)]
    for t, tpc, fpc in zip(thr, tp, fp):
        fpr = fpc / neg if neg > 0 else 0.0
        tpr = tpc / pos if pos > 0 else 0.0
        pts.append((float(t), float(fpr), float(tpr)))
    return pts


def pr_points(scores: np.ndarray, labels: np.ndarray) -> list[tuple[float, float, float]]:
    """(threshold, recall, precision) steps; not interpolated to recall 0."""
    thr, tp, fp = _threshold_groups(scores, labels)
    pos = tp[-1]
    pts = []
    for t, tpc, fpc in zip(thr, tp, fp):
        recall = tpc / pos if pos > 0 else 0.0
        pts.append((float(t), float(recall), float(tpc / (tpc + fpc))))
    return pts


def reliability_bins(
    scores: np.ndarray, labels: np.ndarray, bins: int = DEFAULT_ECE_BINS
) -> list[tuple[float, float, float, int]]:
    """(bin center, mean confidence, accuracy, count) for non-empty bins."""
    conf = np.maximum(scores, 1.0 - scores)
    correct = (scores >= 0.5).astype(np.int64) == labels
    idx = np.minimum((conf * bins).astype(np.int64), bins - 1)
    out = []
    for b in np.unique(idx):
        sel = idx == b
        out.append(
            (
                float((b + 0.5) / bins),
                float(conf[sel].mean()),
                float(correct[sel].mean()),
                int(sel.sum()),
            )
        )
    return out


def emit_curves(p: PredictionSet, bins: int = DEFAULT_ECE_BINS) -> dict:
    """ROC, PR and reliability points per attribute and pooled (micro)."""
    curves = {}
    tasks = [("micro", p.confidences.ravel(), p.labels.ravel())]
    tasks += [
        (p.attribute_names[k], p.confidences[:, k], p.labels[:, k])
        for k in range(p.num_attributes)
    ]
    for name, s, l in tasks:
        entry = {"reliability": reliability_bins(s, l, bins)}
        if 0 < l.sum() < l.size:
            entry["roc"] = roc_points(s, l)
            entry["pr"] = pr_points(s, l)
        curves[name] = entry
    return curves


@dataclass
class MetricsReport:
    per_attribute: dict[str, dict[str, float]]
    micro: dict[str, float]
    macro: dict[str, float]
    curves: dict = field(default_factory=dict)
    num_examples: int = 0

    def to_dict(self) -> dict:
        return {
            "num_examples": self.num_examples,
            "per_attribute": self.per_attribute,
            "micro": self.micro,
            "macro": self.macro,
        }


def full_report(p: PredictionSet, bins: int = DEFAULT_ECE_BINS) -> MetricsReport:
    per_attr_fns = {
        "accuracy": _accuracy_cells,
        "f1": _f1_cells,
        "auroc": _auroc_cells,
        "average_precision": _ap_cells,
        "ece": lambda s, l: _ece_cells(s, l, bins),
    }
    valid_fns = {
        "auroc": lambda l: 0 < l.sum() < l.size,
        "average_precision": lambda l: l.sum() > 0,
    }
    per_attribute: dict[str, dict[str, float]] = {m: {} for m in METRIC_NAMES}
    macro: dict[str, float] = {}
    for metric, fn in per_attr_fns.items():
        for k, name in enumerate(p.attribute_names):
            l = p.labels[:, k]
            valid = valid_fns.get(metric, lambda _: True)(l)
            if valid:
                per_attribute[metric][name] = fn(p.confidences[:, k], l)
        vals = list(per_attribute[metric].values())
        if vals:
            macro[metric] = float(sum(vals) / len(vals))
    micro = {
        "accuracy": accuracy(p),
        "f1": f1(p, "micro"),
        "auroc": auroc(p, "micro"),
        "average_precision": average_precision(p, "micro"),
        "ece": ece(p, "micro", bins),
    }
    return MetricsReport(
        per_attribute=per_attribute,
        micro=micro,
        macro=macro,
        curves=emit_curves(p, bins),
        num_examples=p.confidences.shape[0],
    )


def write_report_files(report: MetricsReport, out_dir) -> None:
    """summary.json, a flat metrics.csv, and one CSV per curve."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as fh:
        fh.write("attribute,metric,value\n")
        for metric in METRIC_NAMES:
            for attr, value in report.per_attribute.get(metric, {}).items():
                fh.write(f"{attr},{metric},{value!r}\n")
        for metric, value in report.micro.items():
            fh.write(f"micro,{metric},{value!r}\n")
        for metric, value in report.macro.items():
            fh.write(f"macro,{metric},{value!r}\n")
    curve_dir = os.path.join(out_dir, "curves")
    os.makedirs(curve_dir, exist_ok=True)
    for name, entry in report.curves.items():
        safe = name.replace("/", "_")
        for kind in ("roc", "pr"):
            if kind not in entry:
                continue
            with open(os.path.join(curve_dir, f"{kind}_{safe}.csv"), "w", encoding="utf-8") as fh:
                fh.write("threshold,x,y\n")
                for t, xx, yy in entry[kind]:
                    fh.write(f"{t!r},{xx!r},{yy!r}\n")
        with open(
            os.path.join(curve_dir, f"reliability_{safe}.csv"), "w", encoding="utf-8"
        ) as fh:
            fh.write("threshold,x,y,count\n")
            for c, mc, acc_b, n_b in entry["reliability"]:
                fh.write(f"{c!r},{mc!r},{acc_b!r},{n_b}\n")
