"""Embedding banks, cosine-NN and Mahalanobis scorers, explicit ensembles, thresholds.

Every score follows one convention: higher means more in-distribution.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import LabeledExample, encode
from .errors import LaclError
from .model import LaclModel

SLICE_MODES = ("full", "upper_half")


@dataclass
class FeatureSet:
    """Per-example features from one inference pass.

    ``z`` is unit-normalised; ``layers`` is ``[L, N, D]`` pooled ``h^l``;
    ``compressed`` is ``[L', N, D/L]`` or ``None`` for the CE baseline.
    """

    z: np.ndarray
    layers: np.ndarray
    compressed: np.ndarray | None
    labels: np.ndarray
    segments: dict[int, slice] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.z)

    @property
    def num_layers(self) -> int:
        return self.layers.shape[0]


@dataclass
class EmbeddingBank(FeatureSet):
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "provenance": self.provenance,
            "labels": self.labels.tolist(),
            "z": self.z.tolist(),
            "layers": self.layers.tolist(),
            "compressed": None if self.compressed is None else self.compressed.tolist(),
            "segments": {str(k): [s.start, s.stop] for k, s in self.segments.items()},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, obj: dict) -> "EmbeddingBank":
        comp = obj["compressed"]
        return cls(
            np.array(obj["z"], dtype=np.float64),
            np.array(obj["layers"], dtype=np.float64),
            None if comp is None else np.array(comp, dtype=np.float64),
            np.array(obj["labels"], dtype=np.int64),
            {int(k): slice(*v) for k, v in obj["segments"].items()},
            obj["provenance"],
        )


def _normalize(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=-1, keepdims=True)
    if (norms <= 1e-12).any():
        raise LaclError("degenerate-vector", "feature row with zero norm")
    return X / norms


def featurize(model: LaclModel, examples: Sequence[LabeledExample]) -> FeatureSet:
    """Deterministic features for ``examples``; OOD rows get label -1."""
    known = set(model.label_names)
    ids = {n: i for i, n in enumerate(model.label_names)}
    labels = []
    for ex in examples:
        if ex.intent is not None and not ex.is_ood:
            if ex.intent not in known:
                raise LaclError("config-mismatch", f"intent {ex.intent!r} unknown to the checkpoint")
            labels.append(ids[ex.intent])
        else:
            labels.append(-1)
    seqs = [encode(ex.text, model.vocab) for ex in examples]
    emb = model.embed(seqs)
    return FeatureSet(
        _normalize(emb.z),
        np.ascontiguousarray(emb.pooled.transpose(1, 0, 2)),
        None if emb.C is None else np.ascontiguousarray(emb.C.transpose(1, 0, 2)),
        np.array(labels, dtype=np.int64),
        model.segment_slices(),
    )


def build_bank(model: LaclModel, train_examples: Sequence[LabeledExample], corpus_id: str = "") -> EmbeddingBank:
    if any(ex.is_ood for ex in train_examples):
        raise LaclError("config-mismatch", "bank examples must be labelled IND data")
    fs = featurize(model, train_examples)
    prov = {"checkpoint_id": model.checkpoint_id(), "corpus_id": corpus_id, "size": len(fs)}
    return EmbeddingBank(fs.z, fs.layers, fs.compressed, fs.labels, fs.segments, prov)


# -- cosine nearest neighbour ------------------------------------------------
def max_cosine(Q: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Best cosine of each query row against bank rows; ties go to the lowest index."""
    if len(B) == 0:
        raise LaclError("empty-bank", "bank has no entries")
    S = _normalize(np.atleast_2d(Q)) @ _normalize(B).T
    idx = S.argmax(axis=1)
    return np.clip(S[np.arange(len(S)), idx], -1.0, 1.0), idx


def _slice_z(z: np.ndarray, segments: dict[int, slice], slice_mode: str) -> np.ndarray:
    if slice_mode == "full":
        return z
    if slice_mode != "upper_half":
        raise LaclError("bad-slice-mode", slice_mode)
    if not segments:
        raise LaclError("no-segments", "upper_half slicing needs a model with a compression layer")
    num_layers = max(segments)
    keep = [segments[l] for l in range(math.ceil(num_layers / 2), num_layers + 1) if l in segments]
    return np.concatenate([z[..., s] for s in keep], axis=-1)


def cosine_scores(Q: np.ndarray, bank: FeatureSet, slice_mode: str = "full"):
    """Vectorised cosine-NN: returns ``(scores, nn_labels)``."""
    q = _slice_z(np.atleast_2d(Q), bank.segments, slice_mode)
    b = _slice_z(bank.z, bank.segments, slice_mode)
    scores, idx = max_cosine(q, b)
    return scores, bank.labels[idx]


def cosine_score(x: np.ndarray, bank: FeatureSet, slice_mode: str = "full") -> tuple[float, int]:
    scores, labels = cosine_scores(np.asarray(x)[None, :], bank, slice_mode)
    return float(scores[0]), int(labels[0])


# -- Mahalanobis ----------------------------------------------------------------
@dataclass
class GaussianStats:
    means: np.ndarray  # [K, F]
    cov: np.ndarray  # tied covariance incl. ridge
    precision: np.ndarray
    eps_cov: float
    classes: np.ndarray

    @classmethod
    def from_parts(cls, means, cov, eps_cov: float = 0.0, classes=None) -> "GaussianStats":
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        cov = np.asarray(cov, dtype=np.float64)
        cov = 0.5 * (cov + cov.T)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise LaclError("singular-covariance", "covariance not positive definite after ridge") from None
        inv_chol = np.linalg.inv(chol)
        precision = inv_chol.T @ inv_chol
        classes = np.arange(len(means)) if classes is None else np.asarray(classes)
        return cls(means, cov, 0.5 * (precision + precision.T), eps_cov, classes)


def mahalanobis_fit(features, labels, eps_cov: float = 1e-6) -> GaussianStats:
    """Class means and a tied (pooled within-class) covariance plus ``eps_cov * I``."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if eps_cov <= 0:
        raise LaclError("bad-ridge", "eps_cov must be positive")
    classes, counts = np.unique(y, return_counts=True)
    if (counts < 2).any():
        raise LaclError("class-too-small", f"classes {classes[counts < 2].tolist()} have < 2 examples")
    means = np.stack([X[y == c].mean(axis=0) for c in classes])
    centered = X - means[np.searchsorted(classes, y)]
    cov = centered.T @ centered / len(X) + eps_cov * np.eye(X.shape[1])
    return GaussianStats.from_parts(means, cov, eps_cov, classes)


def mahalanobis_distances(X, stats: GaussianStats) -> np.ndarray:
    """Squared distances ``[M, K]`` to every class mean."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    diff = X[:, None, :] - stats.means[None, :, :]
    d = np.einsum("mkf,fg,mkg->mk", diff, stats.precision, diff)
    return np.maximum(d, 0.0)


def mahalanobis_scores(X, stats: GaussianStats) -> tuple[np.ndarray, np.ndarray]:
    """Negated squared distance to the nearest class mean, and that class."""
    d = mahalanobis_distances(X, stats)
    idx = d.argmin(axis=1)
    return -d[np.arange(len(d)), idx], stats.classes[idx]


def mahalanobis_score(x, stats: GaussianStats) -> float:
    return float(mahalanobis_scores(np.asarray(x)[None, :], stats)[0][0])


# -- explicit ensembles -----------------------------------------------------------
def _layer_features(fs: FeatureSet, feature: str) -> np.ndarray:
    if feature == "pooled":
        return fs.layers
    if feature == "compressed":
        if fs.compressed is None:
            raise LaclError("missing-layer", "no compressed features on this feature set")
        return fs.compressed
    raise LaclError("bad-feature", feature)


def fit_ensemble_stats(bank: FeatureSet, eps_cov: float = 1e-6, feature: str = "pooled") -> list[GaussianStats]:
    """Per-layer Gaussians: tanh on every layer but the last, raw last layer."""
    layers = _layer_features(bank, feature)
    L = len(layers)
    return [
        mahalanobis_fit(layers[l] if l == L - 1 else np.tanh(layers[l]), bank.labels, eps_cov) for l in range(L)
    ]


def ensemble_scores(query: FeatureSet, bank: FeatureSet | None = None, kind: str = "cosine",
                    stats: Sequence[GaussianStats] | None = None, feature: str = "pooled") -> np.ndarray:
    """Explicit ensemble over layers.

    ``cosine``: sum over layers of the max cosine against that layer's bank.
    ``mahalanobis``: negated ``D(h^L) + sum_{l<L} D(tanh(h^l))``.
    """
    q = _layer_features(query, feature)
    L = len(q)
    if kind == "cosine":
        if bank is None:
            raise LaclError("missing-layer", "cosine ensemble needs a bank")
        b = _layer_features(bank, feature)
        if len(b) != L:
            raise LaclError("missing-layer", f"bank has {len(b)} layers, query has {L}")
        return sum(max_cosine(q[l], b[l])[0] for l in range(L))
    if kind == "mahalanobis":
        if stats is None or len(stats) != L:
            raise LaclError("missing-layer", "need one fitted GaussianStats per layer")
        total = np.zeros(q.shape[1])
        for l in range(L):
            x = q[l] if l == L - 1 else np.tanh(q[l])
            total += mahalanobis_scores(x, stats[l])[0]
        return total
    raise LaclError("bad-kind", kind)


def layerwise_scores(query: FeatureSet, bank: FeatureSet, kind: str = "cosine",
                     eps_cov: float = 1e-6) -> dict[str, np.ndarray]:
    """One score column per encoder layer (``layer1``..``layerL``) plus ``z``."""
    out = {}
    for l in range(bank.num_layers):
        if kind == "cosine":
            out[f"layer{l + 1}"] = max_cosine(query.layers[l], bank.layers[l])[0]
        else:
            stats = mahalanobis_fit(bank.layers[l], bank.labels, eps_cov)
            out[f"layer{l + 1}"] = mahalanobis_scores(query.layers[l], stats)[0]
    if kind == "cosine":
        out["z"] = cosine_scores(query.z, bank)[0]
    else:
        out["z"] = mahalanobis_scores(query.z, mahalanobis_fit(bank.z, bank.labels, eps_cov))[0]
    return out


# -- thresholding -------------------------------------------------------------------
def threshold_at_tpr(ind_scores, tpr: float = 0.95) -> float:
    """Largest score ``d`` with at least ``tpr`` of ``ind_scores`` >= ``d``."""
    s = np.sort(np.asarray(ind_scores, dtype=np.float64))[::-1]
    if len(s) == 0:
        raise LaclError("empty-set", "no IND scores")
    if not 0.0 < tpr <= 1.0:
        raise LaclError("bad-tpr", f"tpr {tpr} outside (0, 1]")
    k = min(max(math.ceil(tpr * len(s) - 1e-9), 1), len(s))
    return float(s[k - 1])


def decide(score: float, delta: float) -> str:
    return "IND" if score >= delta else "OOD"


@dataclass
class ScoreRecord:
    example_id: int
    mode: str
    layer: str
    score: float
    pred_label: int | None
    is_ood: bool


def records_to_csv(records: Sequence[ScoreRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("id", "mode", "layer", "score", "pred_label", "is_ood"))
    for r in records:
        w.writerow((r.example_id, r.mode, r.layer, repr(float(r.score)),
                    "" if r.pred_label is None else r.pred_label, int(r.is_ood)))
    return buf.getvalue()
