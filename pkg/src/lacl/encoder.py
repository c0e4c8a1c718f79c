"""Pre-norm transformer encoder that exposes every block's token states."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .data import PAD
from .errors import LaclError
from .numcore import Tensor, embedding, gelu, index, layer_norm, masked_mean, softmax, stack

_MASK_FILL = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    num_layers: int = 4
    hidden: int = 64
    heads: int = 4
    ff_mult: int = 4
    dropout_p: float = 0.1
    max_len: int = 32

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden < 1 or self.heads < 1:
            raise LaclError("bad-config", "num_layers, hidden and heads must be positive")
        if self.hidden % self.num_layers:
            raise LaclError("bad-config", f"hidden={self.hidden} not divisible by num_layers={self.num_layers}")
        if self.hidden % self.heads:
            raise LaclError("bad-config", f"hidden={self.hidden} not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise LaclError("bad-config", "dropout_p must lie in [0, 1)")
        if self.vocab_size < 4 or self.max_len < 1 or self.ff_mult < 1:
            raise LaclError("bad-config", "vocab_size, max_len or ff_mult out of range")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LayerStates:
    """``H[l]`` is block ``l+1``'s output, shape ``[batch, len, hidden]``."""

    H: list[Tensor]
    mask: np.ndarray

    def __len__(self) -> int:
        return len(self.H)


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    D, F = cfg.hidden, cfg.hidden * cfg.ff_mult

    def w(*shape, std=None):
        std = std if std is not None else 1.0 / math.sqrt(shape[0])
        return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)

    def const(value, *shape):
        return Tensor(np.full(shape, value), requires_grad=True)

    p = {"tok_emb": w(cfg.vocab_size, D, std=1.0), "pos_emb": w(cfg.max_len, D, std=0.1)}
    for l in range(cfg.num_layers):
        pre = f"block{l}."
        p[pre + "ln1.g"], p[pre + "ln1.b"] = const(1.0, D), const(0.0, D)
        for name in ("q", "k", "v", "o"):
            p[pre + f"attn.{name}.w"] = w(D, D)
            p[pre + f"attn.{name}.b"] = const(0.0, D)
        p[pre + "ln2.g"], p[pre + "ln2.b"] = const(1.0, D), const(0.0, D)
        p[pre + "ff.1.w"], p[pre + "ff.1.b"] = w(D, F), const(0.0, F)
        p[pre + "ff.2.w"], p[pre + "ff.2.b"] = w(F, D), const(0.0, D)
    return p


class _Dropout:
    def __init__(self, p: float, seed, active: bool):
        self.p = p
        self.active = active and p > 0
        self.rng = np.random.default_rng(np.random.SeedSequence(seed)) if self.active else None

    def __call__(self, x: Tensor) -> Tensor:
        if not self.active:
            return x
        keep = self.rng.random(x.shape) >= self.p
        return x * (keep / (1.0 - self.p))


def _check_ids(ids: np.ndarray, cfg: EncoderConfig) -> None:
    if ids.ndim != 2 or ids.shape[1] < 1:
        raise LaclError("bad-input", "token batch must be [batch, len] with len >= 1")
    if ids.shape[1] > cfg.max_len:
        raise LaclError("sequence-too-long", f"length {ids.shape[1]} > max_len {cfg.max_len}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise LaclError("unknown-token", f"token id outside [0, {cfg.vocab_size})")


def forward(
    params: dict[str, Tensor],
    cfg: EncoderConfig,
    ids: np.ndarray,
    train_mode: bool = False,
    seed=0,
) -> LayerStates:
    """Run all blocks; ``train_mode`` turns on seeded dropout."""
    ids = np.asarray(ids, dtype=np.int64)
    _check_ids(ids, cfg)
    B, T = ids.shape
    D, Hn = cfg.hidden, cfg.heads
    dh = D // Hn
    mask = ids != PAD
    key_bias = np.where(mask, 0.0, _MASK_FILL)[:, None, None, :]
    drop = _Dropout(cfg.dropout_p, seed, train_mode)

    x = embedding(params["tok_emb"], ids) + index(params["pos_emb"], slice(0, T))
    x = drop(x)
    states = []
    for l in range(cfg.num_layers):
        pre = f"block{l}."
        h = layer_norm(x, params[pre + "ln1.g"], params[pre + "ln1.b"])

        def heads(name):
            t = h @ params[pre + f"attn.{name}.w"] + params[pre + f"attn.{name}.b"]
            return t.reshape(B, T, Hn, dh).transpose(0, 2, 1, 3)

        q, k, v = heads("q"), heads("k"), heads("v")
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh)) + key_bias
        attn = drop(softmax(scores, axis=-1))
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(B, T, D)
        x = x + drop(ctx @ params[pre + "attn.o.w"] + params[pre + "attn.o.b"])

        h = layer_norm(x, params[pre + "ln2.g"], params[pre + "ln2.b"])
        f = gelu(h @ params[pre + "ff.1.w"] + params[pre + "ff.1.b"])
        x = x + drop(f @ params[pre + "ff.2.w"] + params[pre + "ff.2.b"])
        states.append(x)
    return LayerStates(states, mask)


def pool_layers(states: LayerStates) -> Tensor:
    """Masked mean over tokens for every layer; returns ``[batch, L, hidden]``."""
    return stack([masked_mean(H, states.mask) for H in states.H], axis=1)
