"""Central finite differences, the gradient oracle for the tape."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import LaclError


def finite_diff_gradient(
    f: Callable[[np.ndarray], float],
    x,
    h: float = 1e-5,
    coords: Sequence[int] | None = None,
) -> np.ndarray:
    """Estimate ``grad f(x)`` by ``(f(x+h e_i) - f(x-h e_i)) / 2h``.

    With ``coords`` only those flat coordinates are probed; the others stay 0.
    """
    if h <= 0:
        raise LaclError("bad-step", "h must be positive")
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    probe = range(flat.size) if coords is None else coords
    for i in probe:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise LaclError("non-finite-objective", f"f is not finite near coordinate {i}")
        grad[i] = (fp - fm) / (2 * h)
    return grad.reshape(x.shape)


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    ``floor`` keeps near-zero gradients from being judged on round-off alone.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
