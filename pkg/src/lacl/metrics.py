"""AUROC, FPR@95, accuracy and histogram payloads."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import LaclError
from .scoring import ScoreRecord, threshold_at_tpr


def _nonempty(*arrays) -> list[np.ndarray]:
    out = []
    for a in arrays:
        a = np.asarray(a, dtype=np.float64).reshape(-1)
        if a.size == 0:
            raise LaclError("empty-set", "score set is empty")
        out.append(a)
    return out


def auroc(ind_scores, ood_scores) -> float:
    """Mann-Whitney estimate of P(ind > ood), ties counted one half."""
    ind, ood = _nonempty(ind_scores, ood_scores)
    ood = np.sort(ood)
    below = np.searchsorted(ood, ind, side="left")
    at_or_below = np.searchsorted(ood, ind, side="right")
    wins = below.sum() + 0.5 * (at_or_below - below).sum()
    return float(wins / (ind.size * ood.size))


def fpr_at_tpr95(ind_scores, ood_scores, tpr: float = 0.95) -> float:
    ind, ood = _nonempty(ind_scores, ood_scores)
    delta = threshold_at_tpr(ind, tpr)
    return float((ood >= delta).mean())


def accuracy(predictions, labels) -> float:
    p, y = np.asarray(predictions), np.asarray(labels)
    if p.shape != y.shape:
        raise LaclError("length-mismatch", f"{p.shape} predictions vs {y.shape} labels")
    if p.size == 0:
        raise LaclError("empty-set", "no predictions")
    return float((p == y).mean())


@dataclass
class Histogram:
    edges: list[float]
    ind_right: list[int]
    ind_wrong: list[int]
    ood: list[int]
    threshold: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("bin_lo", "bin_hi", "ind_right", "ind_wrong", "ood", "threshold"))
        for i in range(len(self.ind_right)):
            w.writerow((repr(self.edges[i]), repr(self.edges[i + 1]),
                        self.ind_right[i], self.ind_wrong[i], self.ood[i], repr(self.threshold)))
        return buf.getvalue()

    def to_json(self) -> dict:
        return {"edges": self.edges, "ind_right": self.ind_right, "ind_wrong": self.ind_wrong,
                "ood": self.ood, "threshold": self.threshold}


def histogram_payload(records: Sequence[ScoreRecord], true_labels: Sequence[int], bins: int = 20) -> Histogram:
    """Bin IND-right, IND-wrong and OOD scores on one uniform grid; marks the TPR-95 threshold.

    ``true_labels[i]`` is the gold label of ``records[i]`` (ignored for OOD rows).
    """
    if bins < 2:
        raise LaclError("bad-bins", "need at least 2 bins")
    scores = np.array([r.score for r in records], dtype=np.float64)
    ood = np.array([r.is_ood for r in records], dtype=bool)
    right = np.array([not r.is_ood and r.pred_label == y for r, y in zip(records, true_labels)], dtype=bool)
    wrong = ~ood & ~right
    lo, hi = float(scores.min()), float(scores.max())
    edges = np.linspace(lo, hi, bins + 1) if hi > lo else np.linspace(lo, lo + 1.0, bins + 1)
    which = np.clip(np.searchsorted(edges, scores, side="right") - 1, 0, bins - 1)

    def counts(sel):
        return np.bincount(which[sel], minlength=bins).tolist()

    delta = threshold_at_tpr(scores[~ood]) if (~ood).any() else float("nan")
    return Histogram(edges.tolist(), counts(right), counts(wrong), counts(ood), delta)


@dataclass
class ScorerMetrics:
    auroc: float
    fpr_at_95: float
    accuracy: float | None = None
    threshold: float | None = None

    def to_json(self) -> dict:
        d = {"auroc": self.auroc, "fpr_at_95": self.fpr_at_95, "threshold": self.threshold}
        if self.accuracy is not None:
            d["accuracy"] = self.accuracy
        return d


@dataclass
class MetricsReport:
    accuracy: float
    scorers: dict[str, ScorerMetrics] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)
    layerwise_auroc: dict[str, dict[str, float]] = field(default_factory=dict)
    histogram: Histogram | None = None
    info: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "scorers": {k: v.to_json() for k, v in self.scorers.items()},
            "errors": self.errors,
            "layerwise_auroc": self.layerwise_auroc,
            "histogram": None if self.histogram is None else self.histogram.to_json(),
            "info": self.info,
        }


def layerwise_table(columns: dict[str, np.ndarray], is_ood: np.ndarray) -> dict[str, float]:
    is_ood = np.asarray(is_ood, dtype=bool)
    return {name: auroc(s[~is_ood], s[is_ood]) for name, s in columns.items()}


def layerwise_csv(aurocs: dict[str, dict[str, float]]) -> str:
    """Rows ``kind, column, auroc`` from ``{kind: {column: auroc}}``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("kind", "column", "auroc"))
    for kind, cols in aurocs.items():
        for col, v in cols.items():
            w.writerow((kind, col, repr(v)))
    return buf.getvalue()
