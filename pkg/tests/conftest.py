"""Shared fixtures: the desk-scale training runs and the acceptance summary printer."""
import time
from dataclasses import dataclass

import pytest

from lacl.data import close_split
from lacl.evaluate import evaluate
from lacl.metrics import MetricsReport
from lacl.synthetic import bundled_corpus, bundled_sidecar_path
from lacl.trainer import TrainConfig, TrainReport, train

DESK_SEEDS = (1, 2, 3)
DESK_ENCODER = dict(num_layers=4, hidden=64)

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@dataclass
class DeskRun:
    seed: int
    mode: str
    lambda1: float
    report: TrainReport
    metrics: MetricsReport
    seconds: float

    @property
    def auroc(self) -> float:
        return self.metrics.scorers["cosine-single"].auroc

    @property
    def final_adj_cor(self) -> float:
        return self.report.records[-1].mean_adj_cor


def desk_run(seed: int, mode: str = "lacl", lambda1: float = 1.0) -> DeskRun:
    """30 epochs on a 50% close split of the bundled corpus, then every scorer."""
    t0 = time.perf_counter()
    ind, ood = close_split(bundled_corpus(), 0.5, seed)
    cfg = TrainConfig(seed=seed, mode=mode, lambda1=lambda1, epochs=30, bt_sidecar=str(bundled_sidecar_path()))
    model, report = train(ind, DESK_ENCODER, cfg)
    metrics = evaluate(model, ind["train"], ind["test"], ood["test"]).report
    return DeskRun(seed, mode, lambda1, report, metrics, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def desk_runs() -> dict[tuple[int, str, float], DeskRun]:
    """LaCL (lambda1 = 1 and 0) and CE runs for every desk seed, trained once per session."""
    runs = {}
    for seed in DESK_SEEDS:
        for mode, lam in (("lacl", 1.0), ("ce", 1.0), ("lacl", 0.0)):
            runs[seed, mode, lam] = desk_run(seed, mode, lam)
    return runs


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
