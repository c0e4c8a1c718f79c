"""Run the requested scorers over IND/OOD test sets and assemble a MetricsReport."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import LabeledExample
from .errors import LaclError
from .metrics import MetricsReport, ScorerMetrics, accuracy, auroc, histogram_payload, layerwise_table
from .model import LaclModel
from .scoring import (
    EmbeddingBank,
    FeatureSet,
    ScoreRecord,
    build_bank,
    cosine_scores,
    ensemble_scores,
    featurize,
    fit_ensemble_stats,
    layerwise_scores,
    mahalanobis_fit,
    mahalanobis_scores,
    threshold_at_tpr,
    _slice_z,
)

SCORERS = ("cosine-single", "cosine-ens", "maha-single", "maha-ens")
VARIANTS = ("full", "upper-half")


@dataclass
class EvalResult:
    report: MetricsReport
    records: list[ScoreRecord]
    layerwise: dict[str, dict[str, float]]


def _upper_layers(fs: FeatureSet) -> FeatureSet:
    L = fs.num_layers
    keep = slice(math.ceil(L / 2) - 1, L)
    return replace(fs, layers=fs.layers[keep])


def _loo_max_cosine(B: np.ndarray) -> np.ndarray:
    """Each bank row's best cosine against the other rows."""
    Bn = B / np.linalg.norm(B, axis=1, keepdims=True)
    S = Bn @ Bn.T
    np.fill_diagonal(S, -np.inf)
    return np.clip(S.max(axis=1), -1.0, 1.0)


class _Scorer:
    """Scores for one mode: IND test, OOD test, bank (for train-sourced thresholds), predictions."""

    def __init__(self, name: str, bank: EmbeddingBank, slice_mode: str, eps_cov: float, ens_feature: str):
        self.name, self.bank, self.slice_mode = name, bank, slice_mode
        self.eps_cov, self.ens_feature = eps_cov, ens_feature
        self.upper = slice_mode == "upper_half"
        if name == "maha-single":
            self.stats = mahalanobis_fit(bank.z, bank.labels, eps_cov)
        elif name == "maha-ens":
            self.stats = fit_ensemble_stats(bank, eps_cov, ens_feature)

    def __call__(self, fs: FeatureSet) -> tuple[np.ndarray, np.ndarray | None]:
        if self.name == "cosine-single":
            return cosine_scores(fs.z, self.bank, self.slice_mode)
        if self.name == "cosine-ens":
            q, b = (_upper_layers(fs), _upper_layers(self.bank)) if self.upper else (fs, self.bank)
            return ensemble_scores(q, b, "cosine", feature=self.ens_feature), None
        if self.name == "maha-single":
            return mahalanobis_scores(fs.z, self.stats)
        if self.name == "maha-ens":
            return ensemble_scores(fs, kind="mahalanobis", stats=self.stats, feature=self.ens_feature), None
        raise LaclError("unknown-scorer", self.name)

    def train_scores(self) -> np.ndarray:
        """Bank self-scores; nearest-neighbour modes leave the query out."""
        bank = self.bank
        if self.name == "cosine-single":
            return _loo_max_cosine(_slice_z(bank.z, bank.segments, self.slice_mode))
        if self.name == "cosine-ens":
            layers = _upper_layers(bank).layers if self.upper else bank.layers
            return sum(_loo_max_cosine(layer) for layer in layers)
        return self(bank)[0]


def evaluate(
    model: LaclModel,
    train_examples: Sequence[LabeledExample],
    ind_test: Sequence[LabeledExample],
    ood_test: Sequence[LabeledExample],
    scorers: Sequence[str] = SCORERS,
    variant: str = "full",
    threshold_source: str = "test",
    ens_feature: str = "pooled",
    eps_cov: float = 1e-6,
    bins: int = 20,
) -> EvalResult:
    for s in scorers:
        if s not in SCORERS:
            raise LaclError("unknown-scorer", f"{s!r}; choose from {SCORERS}")
    if variant not in VARIANTS:
        raise LaclError("bad-variant", f"{variant!r}; choose from {VARIANTS}")
    if threshold_source not in ("test", "train"):
        raise LaclError("bad-threshold-source", threshold_source)
    if not ind_test or not ood_test:
        raise LaclError("empty-set", "IND and OOD test sets must be non-empty")
    slice_mode = "upper_half" if variant == "upper-half" else "full"

    bank = build_bank(model, train_examples)
    ind = featurize(model, ind_test)
    ood = featurize(model, [replace(ex, label=None) for ex in ood_test])
    n_ind = len(ind)
    is_ood = np.r_[np.zeros(n_ind, bool), np.ones(len(ood), bool)]

    if model.mode == "ce":
        logits = ind.layers[-1] @ model.params["head.w"].data + model.params["head.b"].data
        top_acc = accuracy(logits.argmax(axis=1), ind.labels)
    else:
        _, preds = cosine_scores(ind.z, bank, slice_mode)
        top_acc = accuracy(preds, ind.labels)

    report = MetricsReport(top_acc)
    records: list[ScoreRecord] = []
    for name in scorers:
        try:
            scorer = _Scorer(name, bank, slice_mode, eps_cov, ens_feature)
            s_ind, p_ind = scorer(ind)
            s_ood, p_ood = scorer(ood)
            ref = s_ind if threshold_source == "test" else scorer.train_scores()
            delta = threshold_at_tpr(ref, 0.95)
            report.scorers[name] = ScorerMetrics(
                auroc(s_ind, s_ood),
                float((s_ood >= delta).mean()),
                None if p_ind is None else accuracy(p_ind, ind.labels),
                delta,
            )
        except (LaclError, np.linalg.LinAlgError) as e:
            report.errors[name] = str(e)
            continue
        preds = [None] * (n_ind + len(ood)) if p_ind is None else list(p_ind) + list(p_ood)
        for i, (s, p) in enumerate(zip(np.r_[s_ind, s_ood], preds)):
            records.append(ScoreRecord(i, name, "-", float(s), None if p is None else int(p), bool(is_ood[i])))

    layerwise = {}
    both = replace(ind, z=np.r_[ind.z, ood.z], layers=np.concatenate([ind.layers, ood.layers], axis=1),
                   compressed=None, labels=np.r_[ind.labels, ood.labels])
    for kind in ("cosine", "mahalanobis"):
        try:
            cols = layerwise_scores(both, bank, kind, eps_cov)
        except (LaclError, np.linalg.LinAlgError) as e:
            report.errors[f"layerwise-{kind}"] = str(e)
            continue
        layerwise[kind] = layerwise_table(cols, is_ood)
        for col, scores in cols.items():
            records.extend(
                ScoreRecord(i, f"layerwise-{kind}", col, float(s), None, bool(is_ood[i])) for i, s in enumerate(scores)
            )
    report.layerwise_auroc = layerwise

    primary = "cosine-single" if "cosine-single" in report.scorers else next(iter(report.scorers), None)
    if primary is not None:
        recs = [r for r in records if r.mode == primary]
        gold = list(ind.labels) + [-1] * len(ood)
        report.histogram = histogram_payload(recs, gold, bins)
    report.info = {
        "checkpoint_id": model.checkpoint_id(),
        "mode": model.mode,
        "variant": variant,
        "threshold_source": threshold_source,
        "ensemble_feature": ens_feature,
        "bank_size": len(bank),
        "ind_test_size": n_ind,
        "ood_test_size": len(ood),
        "primary_scorer": primary,
    }
    return EvalResult(report, records, layerwise)
