import numpy as np
import pytest

from maxent_doe.benchmark import adaptive_curve, checkpoints, ff_curve, lhs_curve, run_benchmark, worker_count
from maxent_doe.doe import DoeConfig
from maxent_doe.errors import ParameterError
from maxent_doe.geometry import make_grid
from maxent_doe.testbed import SQUARE, NoiseModel

SEED = make_grid(SQUARE, 5).points
CFG = DoeConfig(n_per_batch=4, n_outer=2)


def test_checkpoints():
    assert checkpoints(25, 8, 10) == [33 + 8 * k for k in range(10)]
    with pytest.raises(ParameterError):
        checkpoints(25, 0, 3)


def test_worker_count(monkeypatch):
    monkeypatch.delenv("MAXENT_DOE_THREADS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("MAXENT_DOE_THREADS", "3")
    assert worker_count() == 3
    for bad in ("0", "many"):
        monkeypatch.setenv("MAXENT_DOE_THREADS", bad)
        with pytest.raises(ParameterError):
            worker_count()


def test_adaptive_curve_improves_on_the_hill():
    curve = adaptive_curve("T1", CFG, SEED, [29, 33])
    assert [n for n, _ in curve] == [29, 33]
    assert all(np.isfinite(e) and e > 0 for _, e in curve)


def test_ff_curve_reports_actual_counts():
    assert [n for n, _ in ff_curve("T1", CFG, [29, 50])] == [25, 49]


def test_lhs_threads_match_serial(monkeypatch):
    monkeypatch.setenv("MAXENT_DOE_THREADS", "1")
    serial = lhs_curve("T6", CFG, [30], seed=4, replicates=3)
    monkeypatch.setenv("MAXENT_DOE_THREADS", "3")
    threaded = lhs_curve("T6", CFG, [30], seed=4, replicates=3)
    np.testing.assert_array_equal(serial, threaded)
    assert serial.shape == (3, 1)


def test_run_benchmark_rows_and_determinism():
    kw = dict(seed=2, replicates=2, noise=NoiseModel("multiplicative", 0.01, 8))
    rows = run_benchmark(["T1"], ["spacing-only", "lhs"], CFG, SEED, **kw)
    again = run_benchmark(["T1"], ["spacing-only", "lhs"], CFG, SEED, **kw)
    assert rows == again
    lhs = [r for r in rows if r.method == "lhs"]
    assert [r.seed for r in lhs] == [2, 2, 3, 3, "mean", "mean"]
    mean29 = np.mean([r.l2 for r in lhs if r.n_points == 29 and r.seed != "mean"])
    assert lhs[4].l2 == pytest.approx(mean29)
    with pytest.raises(ParameterError):
        run_benchmark(["T1"], ["random"], CFG, SEED)
