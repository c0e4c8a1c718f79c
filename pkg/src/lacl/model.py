"""Encoder + compression head (or linear classifier) and its checkpoint format."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Vocabulary, pad_batch
from .encoder import EncoderConfig, LayerStates, forward, init_encoder_params, pool_layers
from .errors import LaclError
from .head import GclConfig, gcl_forward, init_gcl_params
from .numcore import Tensor, index, no_grad

CHECKPOINT_FORMAT = "lacl-checkpoint"
CHECKPOINT_VERSION = 1
MODES = ("lacl", "ce")


@dataclass
class Embeddings:
    """Inference outputs for a list of sequences.

    ``pooled [N, L, D]`` holds every layer's mean-pooled vector, ``C`` the
    compressed per-layer vectors (``None`` for the CE baseline) and ``z`` the
    raw representation scored by cosine-single.
    """

    pooled: np.ndarray
    C: np.ndarray | None
    z: np.ndarray


@dataclass
class LaclModel:
    encoder_cfg: EncoderConfig
    params: dict[str, Tensor]
    vocab: Vocabulary
    label_names: list[str]
    mode: str = "lacl"
    gcl_cfg: GclConfig | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(
        cls,
        encoder_cfg: EncoderConfig,
        vocab: Vocabulary,
        label_names: Sequence[str],
        mode: str = "lacl",
        seed: int = 0,
        g_hidden: int | None = None,
        gcl_shared: bool = True,
        gcl_layers: Sequence[int] | None = None,
    ) -> "LaclModel":
        if mode not in MODES:
            raise LaclError("bad-config", f"mode must be one of {MODES}")
        if encoder_cfg.vocab_size != len(vocab):
            raise LaclError("bad-config", "encoder vocab_size differs from vocabulary size")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1AC1]))
        params = init_encoder_params(encoder_cfg, rng)
        gcl_cfg = None
        if mode == "lacl":
            gcl_cfg = GclConfig(
                encoder_cfg.hidden,
                encoder_cfg.num_layers,
                g_hidden or 2 * encoder_cfg.hidden,
                gcl_shared,
                tuple(gcl_layers) if gcl_layers is not None else None,
            )
            params.update(init_gcl_params(gcl_cfg, rng))
        else:
            D, K = encoder_cfg.hidden, len(label_names)
            params["head.w"] = Tensor(rng.normal(0.0, D**-0.5, size=(D, K)), requires_grad=True)
            params["head.b"] = Tensor(np.zeros(K), requires_grad=True)
        return cls(encoder_cfg, params, vocab, list(label_names), mode, gcl_cfg)

    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    # -- forward paths -------------------------------------------------------
    def layer_states(self, ids: np.ndarray, train_mode: bool = False, seed=0) -> LayerStates:
        return forward(self.params, self.encoder_cfg, ids, train_mode, seed)

    def represent(self, ids: np.ndarray, train_mode: bool = False, seed=0):
        """Returns ``(pooled, C, z)`` tensors; ``C`` is ``None`` in CE mode."""
        pooled = pool_layers(self.layer_states(ids, train_mode, seed))
        if self.mode == "lacl":
            C, z = gcl_forward(pooled, self.params, self.gcl_cfg)
            return pooled, C, z
        return pooled, None, index(pooled, (slice(None), -1))

    def logits(self, z: Tensor) -> Tensor:
        if self.mode != "ce":
            raise LaclError("bad-mode", "only the CE baseline has a classification head")
        return z @ self.params["head.w"] + self.params["head.b"]

    def embed(self, sequences: Sequence[Sequence[int]], batch_size: int = 256) -> Embeddings:
        """Deterministic inference forwards (no dropout) in fixed-size chunks."""
        if not sequences:
            raise LaclError("empty-input", "nothing to embed")
        pooled, Cs, zs = [], [], []
        with no_grad():
            for start in range(0, len(sequences), batch_size):
                ids, _ = pad_batch(sequences[start : start + batch_size], self.encoder_cfg.max_len)
                p, C, z = self.represent(ids)
                pooled.append(p.data)
                zs.append(z.data)
                if C is not None:
                    Cs.append(C.data)
        return Embeddings(
            np.concatenate(pooled),
            np.concatenate(Cs) if Cs else None,
            np.concatenate(zs),
        )

    def segment_slices(self) -> dict[int, slice]:
        """1-based encoder layer -> slice of ``z`` holding its compressed vector."""
        if self.gcl_cfg is None:
            return {}
        w = self.gcl_cfg.width
        return {l: slice(i * w, (i + 1) * w) for i, l in enumerate(self.gcl_cfg.connected)}

    # -- checkpoint ----------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "mode": self.mode,
            "encoder": self.encoder_cfg.to_dict(),
            "gcl": self.gcl_cfg.to_dict() if self.gcl_cfg else None,
            "vocab": self.vocab.to_dict(),
            "label_names": self.label_names,
            "meta": self.meta,
            "params": {
                k: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
                for k, t in sorted(self.params.items())
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    def checkpoint_id(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, obj: dict) -> "LaclModel":
        if obj.get("format") != CHECKPOINT_FORMAT or "version" not in obj:
            raise LaclError("bad-checkpoint", "missing format/version header")
        if obj["version"] != CHECKPOINT_VERSION:
            raise LaclError("bad-checkpoint", f"unsupported version {obj['version']}")
        params = {
            k: Tensor(np.array(v["data"], dtype=np.float64).reshape(v["shape"]), requires_grad=True)
            for k, v in obj["params"].items()
        }
        return cls(
            EncoderConfig(**obj["encoder"]),
            params,
            Vocabulary.from_dict(obj["vocab"]),
            list(obj["label_names"]),
            obj["mode"],
            GclConfig.from_dict(obj["gcl"]) if obj["gcl"] else None,
            obj.get("meta", {}),
        )

    @classmethod
    def load(cls, path) -> "LaclModel":
        path = Path(path)
        if not path.is_file():
            raise LaclError("missing-file", str(path))
        return cls.from_json(json.loads(path.read_text(encoding="utf-8")))
