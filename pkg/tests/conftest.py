import time
from types import SimpleNamespace

import numpy as np
import pytest

from mpfusion.config import load_config
from mpfusion.metrics import compute_metrics
from mpfusion.pipeline import Experiment, simulate

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def reference_run():
    """The shipped reference experiment, every method, run once per session."""
    t0 = time.perf_counter()
    cfg = load_config()
    sim = simulate(cfg)
    exp = Experiment(cfg, sim.sinograms)
    results = exp.run_all()
    elapsed = time.perf_counter() - t0
    by_label = {r.label: r for r in results}
    report = compute_metrics(
        sim.truth,
        sim.labels,
        {k: r.volume for k, r in by_label.items()},
        {k: r.runtime for k, r in by_label.items()},
        {k: r.iterations for k, r in by_label.items()},
    )
    return SimpleNamespace(cfg=cfg, sim=sim, exp=exp, results=by_label, report=report, elapsed=elapsed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
