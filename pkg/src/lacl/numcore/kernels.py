"""Plain-array kernels used for pooling and similarity.

Tape-aware counterparts (``masked_mean``, ``normalize_rows``) accept
:class:`Tensor` inputs and record onto the tape.
"""
from __future__ import annotations

import numpy as np

from ..errors import LaclError
from .tensor import Tensor, as_tensor, sqrt, tsum

EPS = 1e-12


def mean_pool(H) -> np.ndarray:
    """Average the rows of a ``[len, D]`` token matrix."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] < 1:
        raise LaclError("empty-sequence", "mean_pool needs at least one token row")
    return H.sum(axis=0) / H.shape[0]


def l2_normalize(v, eps: float = EPS) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if (norm <= eps).any():
        raise LaclError("degenerate-vector", "norm below %g" % eps)
    return v / norm


def cosine_similarity(a, b, eps: float = EPS) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= eps or nb <= eps:
        raise LaclError("degenerate-vector", "zero-norm input to cosine_similarity")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def masked_mean(H: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over axis -2 of ``H [..., len, D]`` restricted to ``mask [..., len]``."""
    mask = np.asarray(mask, dtype=np.float64)
    counts = mask.sum(axis=-1, keepdims=True)
    if (counts < 1).any():
        raise LaclError("empty-sequence", "a sequence has no non-PAD tokens")
    weights = (mask / counts)[..., None]
    return tsum(as_tensor(H) * weights, axis=-2)


def normalize_rows(Z: Tensor, eps: float = EPS) -> Tensor:
    Z = as_tensor(Z)
    sq = tsum(Z * Z, axis=-1, keepdims=True)
    if (np.sqrt(sq.data) <= eps).any():
        raise LaclError("degenerate-vector", "a row has norm below %g" % eps)
    return Z / sqrt(sq)
