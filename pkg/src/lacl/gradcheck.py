"""Finite-difference audit of the full LaCL objective through encoder and GCL."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import PAD, Vocabulary
from .encoder import EncoderConfig
from .head import correlation_matrix, cr_loss, interleave, scl_loss, total_loss
from .model import LaclModel
from . import numcore as nc
from .numcore import Tensor, backward, finite_diff_gradient, no_grad, normalize_rows, relative_error

BOUNDARY_TOL = 1e-6


def _pos(rng, shape):
    return rng.uniform(0.5, 2.0, size=shape)


def _away_from(rng, shape, points, gap=0.05):
    """Normal draws nudged at least ``gap`` away from kinks at ``points``."""
    x = rng.normal(size=shape)
    for p in points:
        near = np.abs(x - p) < gap
        x[near] = p + np.where(x[near] >= p, gap, -gap) * 2
    return x


def _mask(rng, b, t):
    m = np.zeros((b, t))
    for i, n in enumerate(rng.integers(1, t + 1, size=b)):
        m[i, :n] = 1
    return m


# name -> (input builder, op); every input has at most 32 entries.
OP_CASES = {
    "add": (lambda r: [r.normal(size=(3, 4)), r.normal(size=(4,))], lambda a, b: a + b),
    "sub": (lambda r: [r.normal(size=(3, 1)), r.normal(size=(3, 4))], lambda a, b: a - b),
    "mul": (lambda r: [r.normal(size=(2, 3, 4)), r.normal(size=(3, 1))], lambda a, b: a * b),
    "div": (lambda r: [r.normal(size=(3, 4)), _pos(r, (4,))], lambda a, b: a / b),
    "neg": (lambda r: [r.normal(size=(5,))], lambda a: -a),
    "power": (lambda r: [_pos(r, (3, 4))], lambda a: nc.power(a, 1.7)),
    "exp": (lambda r: [r.normal(size=(3, 4))], nc.exp),
    "log": (lambda r: [_pos(r, (3, 4))], nc.log),
    "sqrt": (lambda r: [_pos(r, (3, 4))], nc.sqrt),
    "tanh": (lambda r: [r.normal(size=(3, 4))], nc.tanh),
    "gelu": (lambda r: [r.normal(size=(3, 4)) * 2], nc.gelu),
    "clip": (lambda r: [_away_from(r, (4, 5), (-0.5, 0.5))], lambda a: nc.clip(a, -0.5, 0.5)),
    "matmul": (lambda r: [r.normal(size=(2, 3)), r.normal(size=(3, 4))], nc.matmul),
    "matmul_batched": (lambda r: [r.normal(size=(2, 2, 3)), r.normal(size=(3, 2))], nc.matmul),
    "sum": (lambda r: [r.normal(size=(3, 4))], lambda a: nc.tsum(a, axis=1, keepdims=True)),
    "mean": (lambda r: [r.normal(size=(2, 3, 4))], lambda a: nc.tmean(a, axis=(0, 2))),
    "reshape": (lambda r: [r.normal(size=(3, 4))], lambda a: nc.reshape(a, (2, 6))),
    "transpose": (lambda r: [r.normal(size=(2, 3, 4))], lambda a: nc.transpose(a, (2, 0, 1))),
    "index": (lambda r: [r.normal(size=(4, 5))], lambda a: nc.index(a, (np.array([0, 2, 2, 3]), np.array([1, 1, 1, 4])))),
    "concat": (lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 2))], lambda a, b: nc.concat([a, b], axis=1)),
    "stack": (lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 3))], lambda a, b: nc.stack([a, b], axis=1)),
    "softmax": (lambda r: [r.normal(size=(3, 5))], lambda a: nc.softmax(a, axis=-1)),
    "log_softmax": (lambda r: [r.normal(size=(3, 5))], lambda a: nc.log_softmax(a, axis=-1)),
    "layer_norm": (
        lambda r: [r.normal(size=(3, 6)), r.normal(size=(6,)), r.normal(size=(6,))],
        nc.layer_norm,
    ),
    "embedding": (lambda r: [r.normal(size=(6, 4))], lambda w: nc.embedding(w, np.array([[0, 3, 3], [5, 1, 0]]))),
    "masked_mean": (
        lambda r: [r.normal(size=(3, 4, 2))],
        lambda h, m=np.array([[1, 1, 0, 0], [1, 1, 1, 1], [1, 0, 0, 0]], float): nc.masked_mean(h, m),
    ),
    "normalize_rows": (lambda r: [r.normal(size=(4, 5))], nc.normalize_rows),
}


def check_op(name: str, seed: int, h: float = 1e-4) -> float:
    """Max relative error between tape and finite-difference gradients for one op.

    The op output is contracted with a fixed random weight so the whole
    Jacobian participates.
    """
    build, op = OP_CASES[name]
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    inputs = build(rng)
    tensors = [Tensor(x, requires_grad=True) for x in inputs]
    out = op(*tensors)
    w = rng.normal(size=out.shape)
    backward((out * w).sum())
    worst = 0.0
    for k, x in enumerate(inputs):
        def f(v, k=k):
            args = [Tensor(v if j == k else inputs[j]) for j in range(len(inputs))]
            with no_grad():
                return float((op(*args).data * w).sum())

        numeric = finite_diff_gradient(f, x, h)
        analytic = tensors[k].grad if tensors[k].grad is not None else np.zeros_like(x)
        worst = max(worst, float(relative_error(analytic, numeric).max()))
    return worst


def op_suite(seeds=range(100), h: float = 1e-4) -> dict[str, float]:
    """Worst relative error per op over ``seeds``."""
    return {name: max(check_op(name, s, h) for s in seeds) for name in OP_CASES}


@dataclass
class GradcheckResult:
    max_rel_error: float
    checked: int
    skipped_batches: int
    skipped_coords: int
    seconds: float


def tiny_model(seed: int = 0, num_layers: int = 2, hidden: int = 8, heads: int = 2, vocab_size: int = 12,
               dropout_p: float = 0.1) -> LaclModel:
    vocab = Vocabulary({f"w{i}": i for i in range(3, vocab_size)} | {"[PAD]": 0, "[UNK]": 1, "[MASK]": 2})
    cfg = EncoderConfig(vocab_size, num_layers, hidden, heads, ff_mult=2, dropout_p=dropout_p, max_len=8)
    return LaclModel.create(cfg, vocab, ["a", "b"], "lacl", seed)


def _random_views(rng: np.random.Generator, batch: int, vocab_size: int, max_len: int):
    def view():
        lens = rng.integers(2, max_len + 1, size=batch)
        ids = np.full((batch, lens.max()), PAD, dtype=np.int64)
        for i, n in enumerate(lens):
            ids[i, :n] = rng.integers(1, vocab_size, size=n)
        return ids

    return view(), view(), rng.integers(0, 2, size=batch)


def lacl_objective(model: LaclModel, ids1, ids2, labels, tau: float, margin: float, lambda1: float, seed):
    """Returns ``(LossBreakdown, correlations)`` for a pre-built two-view batch."""
    _, C1, z1 = model.represent(ids1, True, [seed, 0])
    _, C2, z2 = model.represent(ids2, True, [seed, 1])
    C = interleave(C1, C2)
    Z = normalize_rows(interleave(z1, z2))
    cor = correlation_matrix(C)
    br = total_loss(scl_loss(Z, np.repeat(labels, 2), tau), cr_loss(C, margin, cor), lambda1)
    return br, cor.data


def run_gradcheck(
    n_batches: int = 100,
    seed: int = 0,
    coords_per_batch: int = 12,
    h: float = 1e-4,
    tau: float = 0.05,
    margin: float = 0.5,
    lambda1: float = 1.0,
    batch: int = 2,
    num_layers: int = 2,
    hidden: int = 8,
) -> GradcheckResult:
    """Compare tape gradients of the LaCL loss with central differences.

    Each batch uses a freshly initialised model and random two-view inputs.
    Batches with a correlation within ``BOUNDARY_TOL`` of the margin are
    skipped, as are probes whose +h/-h evaluations select a different
    correlated set (the loss jumps there).
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst, checked, skipped_b, skipped_c = 0.0, 0, 0, 0
    for b in range(n_batches):
        model = tiny_model(seed * 100003 + b, num_layers, hidden)
        ids1, ids2, labels = _random_views(rng, batch, model.encoder_cfg.vocab_size, model.encoder_cfg.max_len)
        params = model.parameters()
        br, cor = lacl_objective(model, ids1, ids2, labels, tau, margin, lambda1, b)
        if (np.abs(cor - margin) < BOUNDARY_TOL).any():
            skipped_b += 1
            continue
        active = cor >= margin
        backward(br.tensor)
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

        for _ in range(coords_per_batch):
            k = rng.integers(len(params))
            p = params[k]
            j = int(rng.integers(p.data.size))
            base = p.data.copy()
            crossed = []

            def f(x, p=p):
                p.data[...] = x
                with no_grad():
                    out, c = lacl_objective(model, ids1, ids2, labels, tau, margin, lambda1, b)
                crossed.append(((c >= margin) != active).any())
                return out.total

            numeric = finite_diff_gradient(f, base, h, coords=[j]).reshape(-1)[j]
            p.data[...] = base
            if any(crossed):
                skipped_c += 1
                continue
            worst = max(worst, float(relative_error(grads[k].reshape(-1)[j], numeric)))
            checked += 1
    return GradcheckResult(worst, checked, skipped_b, skipped_c, time.perf_counter() - t0)
