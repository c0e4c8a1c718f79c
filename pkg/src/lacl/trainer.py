"""AdamW + cosine-annealed training of the LaCL objective or the CE baseline."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .augment import AugmentPolicy, load_sidecar, make_views
from .data import Corpus, build_vocab, pad_batch, batch_iter
from .encoder import EncoderConfig
from .errors import LaclError
from .head import correlation_matrix, cr_loss, interleave, scl_loss, total_loss, upper_half_layers
from .model import LaclModel
from .numcore import Tensor, backward, index, log_softmax, normalize_rows

log = logging.getLogger(__name__)

VARIANTS = ("full", "upper_half_train")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr_peak: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    tau: float = 0.05
    lambda1: float = 1.0
    margin: float = 0.5
    seed: int = 0
    mode: str = "lacl"
    variant: str = "full"
    g_hidden: int = 0  # 0 -> 2 * hidden
    gcl_shared: bool = True
    rsm_rate: float = 0.15
    rsm_span: int = 2
    cutoff_rate: float = 0.15
    bt_sidecar: str = ""
    view1: tuple[str, ...] = ("raw", "rsm")
    view2: tuple[str, ...] = ("bt", "rsm")
    min_freq: int = 1

    def __post_init__(self):
        self.view1, self.view2 = tuple(self.view1), tuple(self.view2)
        if self.lr_peak <= 0:
            raise LaclError("bad-config", "lr_peak must be > 0")
        if self.epochs < 1:
            raise LaclError("bad-config", "epochs must be >= 1")
        if self.batch_size < 2:
            raise LaclError("bad-config", "batch_size must be >= 2")
        if self.mode not in ("lacl", "ce"):
            raise LaclError("bad-config", f"mode {self.mode!r} is not lacl|ce")
        if self.variant not in VARIANTS:
            raise LaclError("bad-config", f"variant {self.variant!r} is not one of {VARIANTS}")
        if self.tau <= 0 or self.lambda1 < 0 or not 0 < self.margin <= 1:
            raise LaclError("bad-config", "need tau > 0, lambda1 >= 0, margin in (0, 1]")

    def policy(self) -> AugmentPolicy:
        return AugmentPolicy(
            self.rsm_rate, self.rsm_span, self.cutoff_rate, self.bt_sidecar or None, self.view1, self.view2
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["view1"], d["view2"] = list(self.view1), list(self.view2)
        return d

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


def lr_at(step: int, total_steps: int, lr_peak: float) -> float:
    """Cosine annealing from ``lr_peak`` at step 0 to 0 at ``total_steps``; no warmup."""
    if not 0 <= step <= total_steps:
        raise LaclError("bad-step", f"step {step} outside [0, {total_steps}]")
    return lr_peak * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class AdamWState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adamw_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray | None],
    state: AdamWState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> AdamWState:
    """One decoupled-weight-decay Adam update, in place on ``params``."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for g in grads:
        if g is not None and not np.isfinite(g).all():
            raise LaclError("gradient-overflow", "non-finite gradient")
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise LaclError("shape-mismatch", f"grad {g.shape} vs param {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p *= 1.0 - lr * weight_decay
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss_total: float
    loss_scl: float | None
    loss_cr: float | None
    mean_adj_cor: float | None


@dataclass
class TrainReport:
    header: dict
    records: list[EpochRecord] = field(default_factory=list)
    checkpoint_path: str | None = None

    CSV_COLUMNS = ("epoch", "lr", "loss_total", "loss_scl", "loss_cr", "mean_adj_cor")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for r in self.records:
            w.writerow(["" if getattr(r, c) is None else repr(getattr(r, c)) for c in self.CSV_COLUMNS])
        return buf.getvalue()


def lacl_batch_loss(model: LaclModel, batch, cfg: TrainConfig, policy, sidecar, coords: tuple):
    """Augmented batch -> two dropout forwards -> GCL -> loss breakdown and correlations."""
    seed, epoch, b = coords
    v1, v2 = [], []
    for i, ex in enumerate(batch):
        a, c = make_views(ex, policy, model.vocab, sidecar, [seed, epoch, b, i])
        v1.append(a)
        v2.append(c)
    max_len = model.encoder_cfg.max_len
    _, C1, z1 = model.represent(pad_batch(v1, max_len)[0], True, [seed, epoch, b, 0])
    _, C2, z2 = model.represent(pad_batch(v2, max_len)[0], True, [seed, epoch, b, 1])
    C = interleave(C1, C2)
    Z = normalize_rows(interleave(z1, z2))
    labels = np.repeat([ex.label for ex in batch], 2)
    cor = correlation_matrix(C)
    br = total_loss(scl_loss(Z, labels, cfg.tau), cr_loss(C, cfg.margin, cor), cfg.lambda1)
    return br, cor


def ce_batch_loss(model: LaclModel, batch, coords: tuple) -> Tensor:
    seed, epoch, b = coords
    ids, _ = pad_batch([ex.tokens for ex in batch], model.encoder_cfg.max_len)
    _, _, z = model.represent(ids, True, [seed, epoch, b, 0])
    logp = log_softmax(model.logits(z), axis=-1)
    y = np.array([ex.label for ex in batch])
    return -index(logp, (np.arange(len(batch)), y)).mean()


def build_model(corpus: Corpus, encoder_overrides: dict, cfg: TrainConfig) -> tuple[LaclModel, Corpus]:
    vocab = build_vocab(corpus, cfg.min_freq)
    enc_cfg = EncoderConfig(vocab_size=len(vocab), **encoder_overrides)
    layers = upper_half_layers(enc_cfg.num_layers) if cfg.variant == "upper_half_train" else None
    model = LaclModel.create(
        enc_cfg, vocab, corpus.label_names, cfg.mode, cfg.seed, cfg.g_hidden or None, cfg.gcl_shared, layers
    )
    return model, corpus.encode(vocab)


def train(corpus: Corpus, encoder_overrides: dict | None = None, cfg: TrainConfig | None = None):
    """Train on ``corpus['train']``; returns ``(model, TrainReport)``."""
    cfg = cfg or TrainConfig()
    if not corpus.splits.get("train"):
        raise LaclError("empty-split", "no training examples")
    model, encoded = build_model(corpus, encoder_overrides or {}, cfg)
    rows = encoded["train"]
    policy = cfg.policy()
    sidecar = load_sidecar(cfg.bt_sidecar) if cfg.bt_sidecar else None
    params = model.parameters()
    arrays = [p.data for p in params]
    state = AdamWState()
    per_epoch = math.ceil(len(rows) / cfg.batch_size)
    total_steps = cfg.epochs * per_epoch
    header = {"encoder": model.encoder_cfg.to_dict(), "train": cfg.to_dict(), "corpus_id": corpus.corpus_id()}
    report = TrainReport(header)
    step = 0
    for epoch in range(cfg.epochs):
        sums = np.zeros(4)
        n = 0
        epoch_lr = lr_at(step, total_steps, cfg.lr_peak)
        for b, batch in enumerate(batch_iter(rows, cfg.batch_size, cfg.seed, epoch)):
            coords = (cfg.seed, epoch, b)
            try:
                if cfg.mode == "lacl":
                    br, cor = lacl_batch_loss(model, batch, cfg, policy, sidecar, coords)
                    loss = br.tensor
                    sums += (br.total, br.scl, br.cr, float(cor.data.mean()) if cor.size else 0.0)
                else:
                    loss = ce_batch_loss(model, batch, coords)
                    sums[0] += loss.item()
                for p in params:
                    p.grad = None
                backward(loss)
                adamw_step(
                    arrays,
                    [p.grad for p in params],
                    state,
                    lr_at(step, total_steps, cfg.lr_peak),
                    cfg.beta1,
                    cfg.beta2,
                    cfg.adam_eps,
                    cfg.weight_decay,
                )
            except LaclError as e:
                raise LaclError(e.code, f"epoch {epoch} batch {b}: {e.detail}") from e
            step += 1
            n += 1
        avg = sums / n
        if cfg.mode == "lacl":
            rec = EpochRecord(epoch, epoch_lr, *(float(x) for x in avg))
        else:
            rec = EpochRecord(epoch, epoch_lr, float(avg[0]), None, None, None)
        report.records.append(rec)
        log.info("epoch %d lr %.3g loss %.4f", epoch, epoch_lr, rec.loss_total)
    for p in params:
        p.grad = None
    model.meta = {"train": cfg.to_dict(), "corpus_id": corpus.corpus_id()}
    return model, report
