"""Global compression layer, supervised contrastive loss and correlation regularisation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import LaclError
from .numcore import EPS, Tensor, as_tensor, clip, exp, gelu, index, log, sqrt, stack, transpose, tsum


@dataclass(frozen=True)
class GclConfig:
    hidden: int  # encoder width D
    num_layers: int  # encoder depth L
    g_hidden: int
    shared: bool = True
    layers: tuple[int, ...] | None = None  # 1-based encoder layers routed into the GCL

    def __post_init__(self):
        if self.hidden % self.num_layers:
            raise LaclError("bad-config", "hidden must be divisible by num_layers")
        for l in self.connected:
            if not 1 <= l <= self.num_layers:
                raise LaclError("bad-config", f"layer {l} outside 1..{self.num_layers}")

    @property
    def width(self) -> int:
        return self.hidden // self.num_layers

    @property
    def connected(self) -> tuple[int, ...]:
        return self.layers if self.layers is not None else tuple(range(1, self.num_layers + 1))

    def to_dict(self) -> dict:
        return {
            "hidden": self.hidden,
            "num_layers": self.num_layers,
            "g_hidden": self.g_hidden,
            "shared": self.shared,
            "layers": list(self.connected),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GclConfig":
        return cls(d["hidden"], d["num_layers"], d["g_hidden"], d["shared"], tuple(d["layers"]))


def upper_half_layers(num_layers: int) -> tuple[int, ...]:
    """Layers ``ceil(L/2) .. L`` (1-based)."""
    return tuple(range(math.ceil(num_layers / 2), num_layers + 1))


def init_gcl_params(cfg: GclConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    D, G, W = cfg.hidden, cfg.g_hidden, cfg.width
    lead = () if cfg.shared else (len(cfg.connected),)

    def w(fan_in, fan_out):
        return Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=lead + (fan_in, fan_out)), requires_grad=True)

    def zeros(n):
        shape = lead + (1, n) if lead else (n,)
        return Tensor(np.zeros(shape), requires_grad=True)

    return {"gcl.1.w": w(D, G), "gcl.1.b": zeros(G), "gcl.2.w": w(G, W), "gcl.2.b": zeros(W)}


def gcl_forward(pooled: Tensor, params: dict[str, Tensor], cfg: GclConfig) -> tuple[Tensor, Tensor]:
    """Compress each connected layer's pooled vector and concatenate.

    ``pooled`` is ``[N, L, D]``. Returns ``C [N, L', D/L]`` and
    ``z [N, L' * D/L]`` with segments in layer order.
    """
    pooled = as_tensor(pooled)
    if pooled.ndim != 3 or pooled.shape[1] != cfg.num_layers or pooled.shape[2] != cfg.hidden:
        raise LaclError("width-mismatch", f"pooled shape {pooled.shape} vs L={cfg.num_layers}, D={cfg.hidden}")
    N = pooled.shape[0]
    sel = [l - 1 for l in cfg.connected]
    h = pooled if len(sel) == cfg.num_layers else index(pooled, (slice(None), np.array(sel)))
    if cfg.shared:
        a = gelu(h @ params["gcl.1.w"] + params["gcl.1.b"])
        C = a @ params["gcl.2.w"] + params["gcl.2.b"]
    else:
        ht = transpose(h, (1, 0, 2))  # [L', N, D]
        a = gelu(ht @ params["gcl.1.w"] + params["gcl.1.b"])
        C = transpose(a @ params["gcl.2.w"] + params["gcl.2.b"], (1, 0, 2))
    z = C.reshape(N, len(sel) * cfg.width)
    return C, z


# -- supervised contrastive loss ----------------------------------------------
def positive_mask(labels) -> np.ndarray:
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    return same


def scl_loss(Z: Tensor, labels, tau: float) -> Tensor:
    """Mean over anchors of ``-log(sum_pos exp(s/tau) / sum_{k != i} exp(s/tau))``.

    ``Z`` rows must already be unit-normalised. The positive sum sits inside
    the log.
    """
    if tau <= 0:
        raise LaclError("bad-temperature", "tau must be positive")
    Z = as_tensor(Z)
    pos = positive_mask(labels)
    if not pos.any(axis=1).all():
        raise LaclError("anchor-without-positive", f"anchors {np.flatnonzero(~pos.any(axis=1)).tolist()}")
    others = ~np.eye(len(pos), dtype=bool)
    S = (Z @ transpose(Z)) * (1.0 / tau)
    shift = np.where(others, S.data, -np.inf).max(axis=1, keepdims=True)
    E = exp(S - shift)
    num = tsum(E * pos, axis=1)
    den = tsum(E * others, axis=1)
    return (log(den) - log(num)).mean()


# -- correlation regularisation ----------------------------------------------
def correlation_matrix(C) -> Tensor:
    """Batch-axis cosine between dimension ``d`` of layers ``l`` and ``l+1``.

    ``C`` is ``[M, L', W]``; returns ``[L'-1, W]``. Columns with norm below
    ``EPS`` give 0.
    """
    C = as_tensor(C)
    if C.shape[0] < 2:
        raise LaclError("batch-too-small", "correlation needs a batch of at least 2")
    lo = index(C, (slice(None), slice(0, -1)))
    hi = index(C, (slice(None), slice(1, None)))
    num = tsum(lo * hi, axis=0)
    sa = tsum(lo * lo, axis=0)
    sb = tsum(hi * hi, axis=0)
    guard = (np.sqrt(sa.data) < EPS) | (np.sqrt(sb.data) < EPS)
    den = sqrt(sa * sb + guard.astype(np.float64))
    return clip((num / den) * (~guard), -1.0, 1.0)


def adjacent_correlation(C, l: int, d: int) -> float:
    """Correlation of dimension ``d`` (0-based) between layers ``l`` and ``l+1`` (1-based)."""
    C = np.asarray(C.data if isinstance(C, Tensor) else C, dtype=np.float64)
    if not 1 <= l < C.shape[1]:
        raise LaclError("bad-layer", f"l must satisfy 1 <= l < {C.shape[1]}")
    return float(correlation_matrix(C[:, l - 1 : l + 1, d : d + 1]).data[0, 0])


def cr_loss(C, margin: float, cor: Tensor | None = None) -> Tensor:
    """Sum of adjacent-layer correlations that reach ``margin``.

    The selected set is treated as a constant; raw correlations are summed.
    """
    if not 0.0 < margin <= 1.0:
        raise LaclError("bad-margin", "margin must lie in (0, 1]")
    cor = correlation_matrix(C) if cor is None else cor
    return tsum(cor * (cor.data >= margin))


@dataclass
class LossBreakdown:
    scl: float
    cr: float
    total: float
    lambda1: float
    tensor: Tensor | None = None


def total_loss(scl, cr, lambda1: float) -> LossBreakdown:
    if lambda1 < 0:
        raise LaclError("bad-weight", "lambda1 must be >= 0")
    scl_t, cr_t = as_tensor(scl), as_tensor(cr)
    t = scl_t + cr_t * lambda1 if lambda1 else scl_t + 0.0
    return LossBreakdown(scl_t.item(), cr_t.item(), t.item(), lambda1, t)


def mean_adjacent_correlation(C) -> float:
    C = C.data if isinstance(C, Tensor) else np.asarray(C)
    if C.shape[1] < 2:
        return 0.0
    return float(correlation_matrix(C).data.mean())


def interleave(a: Tensor, b: Tensor) -> Tensor:
    """Rows ``a0, b0, a1, b1, ...`` so the two views of item ``b`` sit at ``2b, 2b+1``."""
    s = stack([a, b], axis=1)
    return s.reshape((a.shape[0] * 2,) + a.shape[1:])

