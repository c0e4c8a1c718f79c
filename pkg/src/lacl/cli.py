"""Command-line entry point: split, train, eval, gradcheck, synth.

Every command that takes ``--out`` writes ``manifest.json`` there, on success
and on failure, recording the argv, resolved config, seed, input hashes,
outputs and wall-clock duration.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .data import (
    LABELED_SPLITS,
    Corpus,
    RESOURCES,
    close_split,
    far_pair,
    load_corpus,
    load_exclusions,
)
from .encoder import EncoderConfig
from .errors import LaclError
from .evaluate import SCORERS, VARIANTS, evaluate
from .gradcheck import op_suite, run_gradcheck
from .metrics import layerwise_csv
from .model import LaclModel
from .scoring import records_to_csv
from .trainer import TrainConfig, train

log = logging.getLogger("lacl")

# Errors caused by bad inputs or configuration exit with 2; anything else with 1.
INPUT_ERRORS = {
    "missing-file",
    "bad-config",
    "unknown-key",
    "bad-value",
    "malformed-corpus",
    "malformed-record",
    "malformed-sidecar",
    "unknown-split",
    "empty-split",
    "degenerate-split",
    "unknown-exclusion",
    "bad-checkpoint",
    "unknown-scorer",
    "bad-variant",
    "bad-threshold-source",
    "label-mismatch",
    "bad-policy",
    "bad-args",
}

ENCODER_KEYS = ("num_layers", "hidden", "heads", "ff_mult", "dropout_p", "max_len")
GRADCHECK_TOL = 1e-4


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, ensure_ascii=False, default=str) + "\n"


class Run:
    """Collects inputs/outputs/config for the manifest of one command."""

    def __init__(self, command: str, argv: list[str], out: Path | None):
        self.command, self.argv, self.out = command, argv, out
        self.config: dict = {}
        self.seed: int | None = None
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.t0 = time.perf_counter()

    def input(self, path) -> Path:
        path = Path(path)
        if not path.is_file():
            raise LaclError("missing-file", str(path))
        self.inputs[str(path)] = _sha256(path)
        return path

    def output(self, name: str, text: str) -> Path:
        p = _write(self.out / name, text)
        self.outputs.append(name)
        return p

    def manifest(self, status: str, exit_code: int, error: str | None = None) -> None:
        if self.out is None:
            return
        self.out.mkdir(parents=True, exist_ok=True)
        m = {
            "command": self.command,
            "argv": self.argv,
            "version": __version__,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "duration_s": round(time.perf_counter() - self.t0, 3),
            "status": status,
            "exit_code": exit_code,
            "error": error,
        }
        _write(self.out / "manifest.json", _dump_json(m))


def resolve_seed(flag: int | None, configured: int | None = None) -> int:
    """``--seed`` wins, then ``LACL_SEED``, then the config file, then 0."""
    if flag is not None:
        return flag
    env = os.environ.get("LACL_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise LaclError("bad-value", f"LACL_SEED={env!r} is not an integer") from None
    return 0 if configured is None else configured


# -- split -----------------------------------------------------------------------
def _exclusion_list(run: Run, ref: str) -> list[str]:
    """A path, or the stem of a bundled list such as ``clinc_snips``."""
    p = Path(ref)
    if p.is_file():
        return load_exclusions(run.input(p))
    bundled = RESOURCES / "exclusions" / f"{p.stem}.txt"
    if bundled.is_file():
        return load_exclusions(bundled)
    raise LaclError("missing-file", ref)


def cmd_split(args, run: Run) -> int:
    seed = resolve_seed(args.seed)
    run.seed = seed
    run.config = {"mode": args.mode, "ratio": args.ratio, "seed": seed, "exclusions": args.exclusions,
                  "ood": args.ood}
    corpus = load_corpus(run.input(args.dataset))
    if args.mode == "close":
        if args.ood:
            raise LaclError("bad-args", "--ood only applies to --mode far")
        ind, ood = close_split(corpus, args.ratio, seed)
    else:
        if not args.ood:
            raise LaclError("bad-args", "--mode far needs --ood OOD_DATASET")
        excl = _exclusion_list(run, args.exclusions) if args.exclusions else []
        pair = far_pair(corpus, load_corpus(run.input(args.ood), require_train=False), excl)
        ind = pair.ind
        ood = Corpus({"test": pair.ood_test}, [], f"{corpus.name}-far-ood")
    args.out.mkdir(parents=True, exist_ok=True)
    run.output("ind.json", _dump_json(ind.to_json()))
    run.output("ood.json", _dump_json(ood.to_json()))
    summary = {"ind_labels": ind.label_names, "ood_labels": ood.label_names,
               "sizes": {"ind": {k: len(v) for k, v in ind.splits.items()},
                         "ood": {k: len(v) for k, v in ood.splits.items()}}}
    run.output("split.json", _dump_json(summary))
    print(f"IND {len(ind.label_names)} labels, OOD test {len(ood.splits.get('test', []))} rows -> {args.out}")
    return 0


# -- train -----------------------------------------------------------------------
def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _coerce(key: str, value, default):
    """Check a config value against the type of its default."""
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, tuple):
        ok = isinstance(value, list) and all(isinstance(v, str) for v in value)
        value = tuple(value) if ok else value
    else:
        ok = isinstance(value, str)
    if not ok:
        raise LaclError("bad-value", f"key {key!r}: {value!r} does not match the type of {default!r}")
    return value


def load_config(path: Path | None, overrides: list[str]) -> tuple[dict, dict]:
    """Flat TOML file plus ``key=value`` overrides -> (train kwargs, encoder kwargs)."""
    raw: dict = {}
    if path is not None:
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as e:
            raise LaclError("bad-config", f"{path}: {e}") from None
        if isinstance(raw.get("bt_sidecar"), str) and raw["bt_sidecar"]:
            # relative sidecar paths are resolved against the config file's directory
            side = Path(raw["bt_sidecar"])
            raw["bt_sidecar"] = str(side if side.is_absolute() else path.parent / side)
    for item in overrides:
        key, sep, text = item.partition("=")
        if not sep:
            raise LaclError("bad-config", f"--set expects key=value, got {item!r}")
        raw[key.strip()] = _parse_value(text.strip())

    train_defaults = TrainConfig().to_dict()
    enc_defaults = {f: getattr(EncoderConfig(vocab_size=4), f) for f in ENCODER_KEYS}
    train_kw, enc_kw = {}, {}
    for key, value in raw.items():
        if isinstance(value, dict):
            raise LaclError("unknown-key", f"{key!r}: config is flat, tables are not allowed")
        if key in train_defaults:
            d = train_defaults[key]
            train_kw[key] = _coerce(key, value, tuple(d) if isinstance(d, list) else d)
        elif key in enc_defaults:
            enc_kw[key] = _coerce(key, value, enc_defaults[key])
        else:
            raise LaclError("unknown-key", f"{key!r} is not a train or encoder setting")
    return train_kw, enc_kw


def cmd_train(args, run: Run) -> int:
    cfg_path = run.input(args.config) if args.config else None
    train_kw, enc_kw = load_config(cfg_path, args.set or [])
    train_kw["seed"] = resolve_seed(args.seed, train_kw.get("seed"))
    if args.mode:
        train_kw["mode"] = args.mode
    if train_kw.get("bt_sidecar"):
        run.input(train_kw["bt_sidecar"])
    cfg = TrainConfig(**train_kw)
    run.seed = cfg.seed
    run.config = {"train": cfg.to_dict(), "encoder": enc_kw}
    corpus = load_corpus(run.input(args.ind_corpus))
    try:
        EncoderConfig(vocab_size=4, **enc_kw)
    except LaclError as e:
        raise LaclError("bad-config", e.detail) from None
    model, report = train(corpus, enc_kw, cfg)
    run.config["encoder"] = model.encoder_cfg.to_dict()
    args.out.mkdir(parents=True, exist_ok=True)
    ckpt = run.output("checkpoint.json", model.dumps())
    report.checkpoint_path = str(ckpt)
    run.output("train_report.csv", report.to_csv())
    run.output("train_report.json", _dump_json({
        "header": report.header,
        "checkpoint_id": model.checkpoint_id(),
        "records": [r.__dict__ for r in report.records],
    }))
    last = report.records[-1]
    print(f"trained {cfg.mode} for {cfg.epochs} epochs, final loss {last.loss_total:.4f}, "
          f"checkpoint {model.checkpoint_id()} -> {ckpt}")
    return 0


# -- eval ------------------------------------------------------------------------
def _split_ref(run: Run, ref: str, default: str, require_train: bool = False):
    """``path`` or ``path:split``; falls back to the oos splits when ``test`` is absent."""
    path, split = ref, None
    head, sep, tail = ref.rpartition(":")
    if sep and (tail in LABELED_SPLITS or tail.startswith("oos")):
        path, split = head, tail
    corpus = load_corpus(run.input(path), require_train=require_train)
    if split is not None:
        return corpus[split]
    if default in corpus.splits:
        return corpus[default]
    oos = [ex for s in corpus.ood_splits() for ex in corpus.splits[s]]
    if oos:
        return oos
    raise LaclError("unknown-split", f"{path} has no {default!r} split")


def _align(rows, model: LaclModel, what: str):
    """Map intent names onto the checkpoint's label ids."""
    ids = {n: i for i, n in enumerate(model.label_names)}
    out = []
    for ex in rows:
        if ex.intent not in ids:
            raise LaclError("label-mismatch", f"{what}: intent {ex.intent!r} is unknown to the checkpoint")
        out.append(replace(ex, label=ids[ex.intent]))
    return out


def cmd_eval(args, run: Run) -> int:
    scorers = [s.strip() for s in args.scorers.split(",") if s.strip()]
    run.config = {"scorers": scorers, "variant": args.variant, "threshold_source": args.threshold_source,
                  "ens_feature": args.ens_feature, "eps_cov": args.eps_cov, "bins": args.bins}
    model = LaclModel.load(run.input(args.checkpoint))
    run.seed = model.meta.get("train", {}).get("seed")
    train_rows = _align(_split_ref(run, args.ind_train, "train", True), model, "ind_train")
    ind_rows = _align(_split_ref(run, args.ind_test, "test"), model, "ind_test")
    ood_rows = [replace(ex, label=None) for ex in _split_ref(run, args.ood_test, "test")]
    res = evaluate(model, train_rows, ind_rows, ood_rows, scorers, args.variant, args.threshold_source,
                   args.ens_feature, args.eps_cov, args.bins)
    args.out.mkdir(parents=True, exist_ok=True)
    run.output("metrics.json", _dump_json(res.report.to_json()))
    run.output("layerwise.csv", layerwise_csv(res.layerwise))
    if res.report.histogram is not None:
        run.output("histogram.csv", res.report.histogram.to_csv())
    run.output("scores.csv", records_to_csv(res.records))
    print(f"accuracy {res.report.accuracy:.4f}")
    for name, m in res.report.scorers.items():
        print(f"{name:14s} AUROC {m.auroc:.4f}  FPR@95 {m.fpr_at_95:.4f}")
    for name, err in res.report.errors.items():
        print(f"{name:14s} FAILED {err}", file=sys.stderr)
    return 1 if any(s not in res.report.scorers for s in scorers) else 0


# -- gradcheck / synth -----------------------------------------------------------
def cmd_gradcheck(args, run: Run) -> int:
    seed = resolve_seed(args.seed)
    run.seed = seed
    run.config = {"batches": args.batches, "op_seeds": args.op_seeds}
    ops = op_suite(range(seed, seed + args.op_seeds))
    full = run_gradcheck(args.batches, seed)
    worst_op = max(ops, key=ops.get)
    print(f"ops: max relative error {ops[worst_op]:.3e} ({worst_op}) over {args.op_seeds} seeds")
    print(f"lacl objective: max relative error {full.max_rel_error:.3e} over {full.checked} probes "
          f"({full.skipped_batches} batches, {full.skipped_coords} probes skipped at the margin) "
          f"in {full.seconds:.1f}s")
    worst = max(ops[worst_op], full.max_rel_error)
    print(f"max relative error {worst:.3e}")
    if run.out is not None:
        run.out.mkdir(parents=True, exist_ok=True)
        run.output("gradcheck.json", _dump_json({"ops": ops, "objective": full.__dict__, "max_rel_error": worst}))
    return 0 if worst < GRADCHECK_TOL else 1


def cmd_synth(args, run: Run) -> int:
    from .synthetic import write_bundle

    args.out.mkdir(parents=True, exist_ok=True)
    write_bundle(args.out)
    run.outputs += ["synthetic_intents.json", "synthetic_bt.json"]
    print(f"wrote synthetic corpus and paraphrase sidecar to {args.out}")
    return 0


# -- entry -----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lacl", description="Layer-agnostic contrastive OOD detection for intents.")
    p.add_argument("--version", action="version", version=f"lacl {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("split", help="make IND/OOD corpora from a dataset")
    s.add_argument("dataset", type=Path)
    s.add_argument("--mode", choices=("close", "far"), default="close")
    s.add_argument("--ratio", type=float, default=0.5, help="fraction of intents kept as IND (close mode)")
    s.add_argument("--seed", type=int)
    s.add_argument("--exclusions", help="file or bundled list name of IND classes to drop (far mode)")
    s.add_argument("--ood", type=Path, help="dataset supplying OOD test utterances (far mode)")
    s.add_argument("--out", type=Path, required=True)

    t = sub.add_parser("train", help="train a LaCL or CE-baseline encoder")
    t.add_argument("ind_corpus", type=Path)
    t.add_argument("--config", type=Path, help="flat TOML of train/encoder keys")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--mode", choices=("lacl", "ce"))
    t.add_argument("--seed", type=int)
    t.add_argument("--out", type=Path, required=True)

    e = sub.add_parser("eval", help="score IND/OOD test sets with a checkpoint")
    e.add_argument("checkpoint", type=Path)
    e.add_argument("ind_train", help="corpus path, optionally path:split (default train)")
    e.add_argument("ind_test", help="corpus path, optionally path:split (default test)")
    e.add_argument("ood_test", help="corpus path, optionally path:split (default test, else oos splits)")
    e.add_argument("--scorers", default=",".join(SCORERS), help=f"comma list from {','.join(SCORERS)}")
    e.add_argument("--variant", choices=VARIANTS, default="full")
    e.add_argument("--threshold-source", choices=("test", "train"), default="test")
    e.add_argument("--ens-feature", choices=("pooled", "compressed"), default="pooled")
    e.add_argument("--eps-cov", type=float, default=1e-6)
    e.add_argument("--bins", type=int, default=20)
    e.add_argument("--out", type=Path, required=True)

    g = sub.add_parser("gradcheck", help="compare tape gradients with finite differences")
    g.add_argument("--batches", type=int, default=100)
    g.add_argument("--op-seeds", type=int, default=100)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", type=Path)

    y = sub.add_parser("synth", help="write the bundled synthetic corpus and paraphrase sidecar")
    y.add_argument("--out", type=Path, required=True)
    return p


COMMANDS = {"split": cmd_split, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck,
            "synth": cmd_synth}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    run = Run(args.command, argv, getattr(args, "out", None))
    try:
        code = COMMANDS[args.command](args, run)
    except LaclError as e:
        code = 2 if e.code in INPUT_ERRORS else 1
        print(f"lacl {args.command}: {e}", file=sys.stderr)
        run.manifest("error", code, str(e))
        return code
    except OSError as e:
        print(f"lacl {args.command}: {e}", file=sys.stderr)
        run.manifest("error", 2, str(e))
        return 2
    run.manifest("ok" if code == 0 else "error", code)
    return code


if __name__ == "__main__":
    sys.exit(main())
