"""Template-generated intent corpus and paraphrase sidecar used for desk runs.

Eight intents in four domains. Intents in a domain share nouns and some
verbs, so close-OOD splits are not separable by vocabulary alone.
"""
from __future__ import annotations

import itertools
import json
from pathlib import Path

import numpy as np

from .data import RESOURCES, Corpus, corpus_from_json

PREFIXES = ["", "please", "can you", "i want to", "could you", "i need to", "help me"]
SUFFIXES = ["", "now", "today", "for me", "right away", "please"]

INTENTS = {
    "transfer_money": ("banking", ["send", "transfer", "move", "wire"],
                       ["money to my savings", "funds to john", "cash to my account", "fifty dollars to mom"]),
    "check_balance": ("banking", ["check", "show", "tell me", "look at"],
                      ["my balance", "the balance on my account", "how much money i have", "my account total"]),
    "book_flight": ("travel", ["book", "reserve", "find", "get"],
                    ["a flight to paris", "a plane ticket to tokyo", "an airline seat to rome", "a flight for my trip"]),
    "book_hotel": ("travel", ["book", "reserve", "find", "get"],
                   ["a hotel room in paris", "a place to stay in rome", "a hotel for my trip", "lodging near the airport"]),
    "play_music": ("music", ["play", "put on", "start", "blast"],
                   ["some jazz", "my favorite song", "music by queen", "the new album"]),
    "update_playlist": ("music", ["add", "save", "put", "include"],
                        ["this song to my playlist", "the track to my workout playlist",
                         "this album to my list", "queen to my road trip playlist"]),
    "find_recipe": ("food", ["find", "show", "give me", "look up"],
                    ["a recipe for pasta", "how to cook rice", "a soup recipe", "instructions for baking bread"]),
    "order_food": ("food", ["order", "get", "deliver", "buy"],
                   ["a pizza", "some sushi for dinner", "food from the thai place", "a burger and fries"]),
}

OOS_TEMPLATES = [
    "tell me a joke", "what is the meaning of life", "who won the game last night",
    "how tall is mount everest", "what time is it in london", "is it going to rain tomorrow",
    "how do i fix a flat tire", "what is your favorite color", "translate hello into french",
    "how many planets are there", "remind me to call dad", "what does a cat eat",
]


def _sentence(prefix: str, verb: str, obj: str, suffix: str) -> str:
    return " ".join(p for p in (prefix, verb, obj, suffix) if p)


def generate(seed: int = 0, n_train: int = 60, n_val: int = 10, n_test: int = 30) -> dict:
    """Return a CLINC-layout dict with ``n_*`` distinct utterances per intent."""
    rng = np.random.default_rng(seed)
    out = {"train": [], "val": [], "test": []}
    for intent, (domain, verbs, objs) in INTENTS.items():
        combos = list(itertools.product(PREFIXES, verbs, objs, SUFFIXES))
        pick = rng.choice(len(combos), size=n_train + n_val + n_test, replace=False)
        texts = [_sentence(*combos[i]) for i in pick]
        out["train"] += [[t, intent, domain] for t in texts[:n_train]]
        out["val"] += [[t, intent, domain] for t in texts[n_train : n_train + n_val]]
        out["test"] += [[t, intent, domain] for t in texts[n_train + n_val :]]
    out["oos_test"] = [[t, "oos"] for t in OOS_TEMPLATES]
    return out


def paraphrases(text: str, n: int, rng: np.random.Generator) -> list[str]:
    """Stand-in for back-translation: resample prefix, verb and suffix of a template sentence."""
    for intent, (_, verbs, objs) in INTENTS.items():
        for obj in objs:
            if f" {obj}" not in f" {text} ":
                continue
            head, _, tail = f" {text} ".partition(f" {obj} ")
            verb = next((v for v in sorted(verbs, key=len, reverse=True) if head.rstrip().endswith(v)), None)
            if verb is None:
                continue
            outs = set()
            for _ in range(8 * n):
                cand = _sentence(
                    PREFIXES[rng.integers(len(PREFIXES))],
                    verbs[rng.integers(len(verbs))],
                    obj,
                    SUFFIXES[rng.integers(len(SUFFIXES))],
                )
                if cand != text:
                    outs.add(cand)
                if len(outs) >= n:
                    break
            return sorted(outs)
    return []


def generate_sidecar(corpus: dict, seed: int = 0, n: int = 3) -> dict:
    rng = np.random.default_rng(seed)
    texts = sorted({rec[0] for rec in corpus["train"]})
    return {t: paraphrases(t, n, rng) for t in texts}


def bundled_corpus() -> Corpus:
    return corpus_from_json(json.loads((RESOURCES / "synthetic_intents.json").read_text()), "synthetic_intents")


def bundled_sidecar_path() -> Path:
    return RESOURCES / "synthetic_bt.json"


def write_bundle(directory=RESOURCES) -> None:
    directory = Path(directory)
    corpus = generate()
    (directory / "synthetic_intents.json").write_text(json.dumps(corpus, indent=1) + "\n")
    (directory / "synthetic_bt.json").write_text(json.dumps(generate_sidecar(corpus), indent=1) + "\n")


if __name__ == "__main__":
    write_bundle()
