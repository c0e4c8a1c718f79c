"""Token-level augmentations that produce the two contrastive views.

Dropout is not here: the encoder applies it during its stochastic forward.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import MASK, LabeledExample, Vocabulary, encode
from .errors import LaclError

KNOWN_AUGMENTATIONS = ("raw", "bt", "rsm", "shuffle", "cutoff")


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed) if isinstance(seed, (list, tuple)) else seed)


def random_span_mask(tokens: Sequence[int], rate: float, span: int, seed) -> list[int]:
    """Mask non-overlapping spans of ``span`` tokens until ``ceil(rate*len)`` are covered.

    Coverage is capped at ``len - 1`` so one real token always survives; the
    last span is shortened when a full span would overshoot the cap or no
    longer fits.
    """
    out = list(tokens)
    n = len(out)
    target = min(math.ceil(rate * n - 1e-9), n - 1)
    if target <= 0:
        return out
    rng = _rng(seed)
    masked = np.zeros(n, dtype=bool)
    covered = 0
    while covered < target:
        k = min(span, target - covered)
        while True:
            free = ~masked
            starts = [s for s in range(n - k + 1) if free[s : s + k].all()]
            if starts or k == 1:
                break
            k -= 1
        s = starts[rng.integers(len(starts))]
        masked[s : s + k] = True
        covered += k
    for i in np.flatnonzero(masked):
        out[i] = MASK
    return out


def token_cutoff(tokens: Sequence[int], rate: float, seed) -> list[int]:
    n = len(tokens)
    drop = min(int(math.floor(rate * n + 1e-9)), n - 1)
    if drop <= 0:
        return list(tokens)
    gone = set(_rng(seed).choice(n, size=drop, replace=False).tolist())
    return [t for i, t in enumerate(tokens) if i not in gone]


def token_shuffle(tokens: Sequence[int], seed) -> list[int]:
    if len(tokens) <= 1:
        return list(tokens)
    perm = _rng(seed).permutation(len(tokens))
    return [tokens[i] for i in perm]


def load_sidecar(path) -> dict[str, list[str]]:
    """Paraphrase sidecar: JSON object mapping source text to candidate rewrites."""
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(obj, dict) or not all(isinstance(v, list) for v in obj.values()):
        raise LaclError("malformed-sidecar", str(path))
    return obj


def back_translate(text: str, sidecar: dict[str, list[str]] | None, seed=0) -> str:
    if not sidecar:
        return text
    norm = text.strip().lower()
    cands = [p for p in sidecar.get(text, []) if p.strip().lower() != norm]
    if not cands:
        return text
    return cands[_rng(seed).integers(len(cands))]


@dataclass(frozen=True)
class AugmentPolicy:
    rsm_rate: float = 0.15
    rsm_span: int = 2
    cutoff_rate: float = 0.15
    bt_sidecar_path: str | None = None
    view1: tuple[str, ...] = ("raw", "rsm")
    view2: tuple[str, ...] = ("bt", "rsm")

    def __post_init__(self):
        for name in ("rsm_rate", "cutoff_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise LaclError("bad-policy", f"{name} must lie in [0, 1]")
        if self.rsm_span < 1:
            raise LaclError("bad-policy", "rsm_span must be >= 1")
        for recipe in (self.view1, self.view2):
            for i, step in enumerate(recipe):
                if step not in KNOWN_AUGMENTATIONS:
                    raise LaclError("bad-policy", f"unknown augmentation {step!r}")
                if step == "bt" and i != 0:
                    raise LaclError("bad-policy", "bt rewrites text and must come first in a recipe")

    @classmethod
    def dropout_only(cls) -> "AugmentPolicy":
        return cls(rsm_rate=0.0, cutoff_rate=0.0, view1=("raw",), view2=("raw",))


def apply_recipe(
    example: LabeledExample,
    recipe: Sequence[str],
    policy: AugmentPolicy,
    vocab: Vocabulary,
    sidecar: dict | None,
    seed: Sequence[int],
) -> list[int]:
    tokens = list(example.tokens) if example.tokens else encode(example.text, vocab)
    for step_idx, step in enumerate(recipe):
        sub = [*seed, step_idx]
        if step == "bt":
            text = back_translate(example.text, sidecar, sub)
            if text != example.text:
                tokens = encode(text, vocab)
        elif step == "rsm":
            tokens = random_span_mask(tokens, policy.rsm_rate, policy.rsm_span, sub)
        elif step == "cutoff":
            tokens = token_cutoff(tokens, policy.cutoff_rate, sub)
        elif step == "shuffle":
            tokens = token_shuffle(tokens, sub)
    return tokens


def make_views(
    example: LabeledExample,
    policy: AugmentPolicy,
    vocab: Vocabulary,
    sidecar: dict | None = None,
    seed: Sequence[int] | int = 0,
) -> tuple[list[int], list[int]]:
    """Build the two augmented token views of one example; each view gets its own seed."""
    base = list(seed) if isinstance(seed, (list, tuple)) else [seed]
    v1 = apply_recipe(example, policy.view1, policy, vocab, sidecar, [*base, 0])
    v2 = apply_recipe(example, policy.view2, policy, vocab, sidecar, [*base, 1])
    return v1, v2
