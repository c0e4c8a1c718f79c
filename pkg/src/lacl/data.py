"""Intent corpora: loading, vocabulary, encoding, OOD splits and batching."""
from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import LaclError

PAD, UNK, MASK = 0, 1, 2
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[MASK]")
LABELED_SPLITS = ("train", "val", "test")
RESOURCES = Path(__file__).parent / "resources"


@dataclass(frozen=True)
class LabeledExample:
    text: str
    label: int | None
    intent: str | None = None
    domain: str | None = None
    tokens: tuple[int, ...] = ()

    @property
    def is_ood(self) -> bool:
        return self.label is None


@dataclass
class Corpus:
    """Named splits of examples plus the intent names behind label ids.

    Splits whose name starts with ``oos`` hold label-free OOD utterances.
    """

    splits: dict[str, list[LabeledExample]]
    label_names: list[str]
    name: str = "corpus"

    def __getitem__(self, split: str) -> list[LabeledExample]:
        try:
            return self.splits[split]
        except KeyError:
            raise LaclError("unknown-split", f"{self.name} has no split {split!r}") from None

    @property
    def num_labels(self) -> int:
        return len(self.label_names)

    def ood_splits(self) -> list[str]:
        return [s for s in self.splits if s.startswith("oos")]

    def encode(self, vocab: "Vocabulary") -> "Corpus":
        splits = {
            name: [replace(ex, tokens=tuple(encode(ex.text, vocab))) for ex in rows]
            for name, rows in self.splits.items()
        }
        return Corpus(splits, list(self.label_names), self.name)

    def corpus_id(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.splits):
            for ex in self.splits[name]:
                h.update(f"{name}\t{ex.text}\t{ex.intent}\n".encode())
        return h.hexdigest()[:16]

    def to_json(self) -> dict:
        out = {}
        for name, rows in self.splits.items():
            recs = []
            for ex in rows:
                rec = [ex.text, ex.intent if ex.intent is not None else "oos"]
                if ex.domain is not None:
                    rec.append(ex.domain)
                recs.append(rec)
            out[name] = recs
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


def _valid_split_name(name: str) -> bool:
    return name in LABELED_SPLITS or name.startswith("oos_") or name == "oos"


def corpus_from_json(obj: dict, name: str = "corpus", require_train: bool = True) -> Corpus:
    if not isinstance(obj, dict):
        raise LaclError("malformed-corpus", "top level must be an object of split -> records")
    raw: dict[str, list[tuple[str, str, str | None]]] = {}
    for split, records in obj.items():
        if not _valid_split_name(split):
            raise LaclError("unknown-split", f"unexpected split key {split!r}")
        if not isinstance(records, list):
            raise LaclError("malformed-record", f"split {split!r} is not an array")
        rows = []
        for i, rec in enumerate(records):
            ok = (
                isinstance(rec, (list, tuple))
                and len(rec) in (2, 3)
                and all(isinstance(x, str) for x in rec)
                and rec[0].split()
            )
            if not ok:
                raise LaclError("malformed-record", f"split {split!r} record {i}: {rec!r}")
            rows.append((rec[0], rec[1], rec[2] if len(rec) == 3 else None))
        raw[split] = rows
    if require_train and not raw.get("train"):
        raise LaclError("empty-split", "train split is missing or empty")
    if not any(raw.values()):
        raise LaclError("empty-split", "corpus has no records")

    names = sorted({intent for s, rows in raw.items() if not s.startswith("oos") for _, intent, _ in rows})
    ids = {n: i for i, n in enumerate(names)}
    splits = {}
    for split, rows in raw.items():
        ood = split.startswith("oos")
        splits[split] = [
            LabeledExample(text, None if ood else ids[intent], None if ood else intent, domain)
            for text, intent, domain in rows
        ]
    return Corpus(splits, names, name)


def load_corpus(path, require_train: bool = True) -> Corpus:
    """Read a CLINC150-layout JSON file (split name -> [[text, intent(, domain)], ...]).

    ``require_train=False`` admits evaluation-only files such as an OOD test set.
    """
    path = Path(path)
    if not path.is_file():
        raise LaclError("missing-file", str(path))
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise LaclError("malformed-corpus", f"{path}: {e}") from None
    return corpus_from_json(obj, name=path.stem, require_train=require_train)


# -- vocabulary ---------------------------------------------------------------
def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass
class Vocabulary:
    token_to_id: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for i, tok in enumerate(SPECIAL_TOKENS):
            if self.token_to_id.setdefault(tok, i) != i:
                raise LaclError("bad-vocab", f"{tok} must have id {i}")

    def __len__(self) -> int:
        return len(self.token_to_id)

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def to_dict(self) -> dict:
        return {"tokens": [t for t, _ in sorted(self.token_to_id.items(), key=lambda kv: kv[1])]}

    @classmethod
    def from_dict(cls, obj: dict) -> "Vocabulary":
        return cls({t: i for i, t in enumerate(obj["tokens"])})


def build_vocab(corpus: Corpus, min_freq: int = 1, split: str = "train") -> Vocabulary:
    if min_freq < 1:
        raise LaclError("bad-min-freq", "min_freq must be >= 1")
    counts = Counter(tok for ex in corpus[split] for tok in tokenize(ex.text))
    kept = sorted(t for t, c in counts.items() if c >= min_freq and t not in SPECIAL_TOKENS)
    mapping = {t: i for i, t in enumerate(SPECIAL_TOKENS)}
    mapping.update({t: i + len(SPECIAL_TOKENS) for i, t in enumerate(kept)})
    return Vocabulary(mapping)


def encode(text: str, vocab: Vocabulary) -> list[int]:
    return [vocab.id(t) for t in tokenize(text)]


# -- OOD settings -----------------------------------------------------------
def _relabel(rows: Sequence[LabeledExample], names: list[str]) -> list[LabeledExample]:
    ids = {n: i for i, n in enumerate(names)}
    return [replace(ex, label=ids[ex.intent]) for ex in rows if ex.intent in ids]


def close_split(corpus: Corpus, ratio: float, seed: int) -> tuple[Corpus, Corpus]:
    """Partition intents into IND (``ceil(ratio*K)`` of them) and OOD by seeded shuffle."""
    if not 0.0 < ratio < 1.0:
        raise LaclError("degenerate-split", f"ratio {ratio} outside (0, 1)")
    k = corpus.num_labels
    n_ind = math.ceil(ratio * k - 1e-9)
    if n_ind < 1 or n_ind >= k:
        raise LaclError("degenerate-split", f"ratio {ratio} with {k} labels leaves a side empty")
    perm = np.random.default_rng(seed).permutation(k)
    ind_names = sorted(corpus.label_names[i] for i in perm[:n_ind])
    ood_names = sorted(corpus.label_names[i] for i in perm[n_ind:])
    ood_set = set(ood_names)
    ind_splits, ood_splits = {}, {}
    for split in LABELED_SPLITS:
        if split not in corpus.splits:
            continue
        rows = corpus.splits[split]
        ind_splits[split] = _relabel(rows, ind_names)
        ood_splits[split] = [replace(ex, label=None) for ex in rows if ex.intent in ood_set]
    ind = Corpus(ind_splits, ind_names, f"{corpus.name}-ind")
    ood = Corpus(ood_splits, ood_names, f"{corpus.name}-ood")
    return ind, ood


def load_exclusions(path) -> list[str]:
    """One class name per line; ``#`` starts a comment."""
    names = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            names.append(line)
    return names


def bundled_exclusions(name: str) -> list[str]:
    return load_exclusions(RESOURCES / "exclusions" / f"{name}.txt")


@dataclass
class PairedSet:
    ind: Corpus
    ood_test: list[LabeledExample]
    excluded: list[str]


def exclude_classes(corpus: Corpus, exclusions: Sequence[str]) -> Corpus:
    """Drop every intent whose name, or whose domain, is listed."""
    intents = set(corpus.label_names)
    domains = {ex.domain for rows in corpus.splits.values() for ex in rows if ex.domain}
    unknown = [n for n in exclusions if n not in intents and n not in domains]
    if unknown:
        raise LaclError("unknown-exclusion", ", ".join(unknown))
    drop = set(exclusions)
    keep = [n for n in corpus.label_names if n not in drop]
    dropped_by_domain = {
        ex.intent for rows in corpus.splits.values() for ex in rows if ex.domain in drop and ex.intent
    }
    keep = [n for n in keep if n not in dropped_by_domain]
    splits = {}
    for split, rows in corpus.splits.items():
        if split.startswith("oos"):
            splits[split] = list(rows)
        else:
            splits[split] = _relabel(rows, keep)
    return Corpus(splits, keep, corpus.name)


def far_pair(ind_corpus: Corpus, ood_corpus: Corpus, exclusions: Sequence[str] = ()) -> PairedSet:
    """IND corpus minus overlapping classes, paired with another corpus's test split as OOD."""
    ind = exclude_classes(ind_corpus, exclusions) if exclusions else ind_corpus
    ood_rows = ood_corpus.splits.get("test") or [
        ex for s in ood_corpus.ood_splits() for ex in ood_corpus.splits[s]
    ]
    ood_test = [replace(ex, label=None) for ex in ood_rows]
    return PairedSet(ind, ood_test, list(exclusions))


# -- batching ------------------------------------------------------------------
def batch_iter(rows: Sequence, batch_size: int, seed: int, epoch: int) -> Iterator[list]:
    """Seeded per-epoch shuffle; the last short batch is kept."""
    if batch_size < 2:
        raise LaclError("bad-batch-size", "batch_size must be >= 2")
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
    order = rng.permutation(len(rows))
    for start in range(0, len(rows), batch_size):
        yield [rows[i] for i in order[start : start + batch_size]]


def pad_batch(seqs: Sequence[Sequence[int]], max_len: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad token lists with PAD; returns ``(ids [B, T], mask [B, T])``.

    Sequences longer than ``max_len`` are truncated.
    """
    if max_len is not None:
        seqs = [list(s)[:max_len] for s in seqs]
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
    return ids, ids != PAD
