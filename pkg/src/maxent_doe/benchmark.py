"""Error curves of adaptive and baseline designs on the analytic test functions.

Every curve is evaluated at the same checkpoints ``n_seed + k N_p`` so the
adaptive loop and the full-factorial and Latin-hypercube baselines can be
compared point for point.  Errors are measured against the noiseless
function on the ``100 x 100`` evaluation grid.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from .doe import DoeConfig, run_doe
from .errors import MaxentDoeError, ParameterError
from .geometry import Domain, NodeSet, make_grid
from .holmes import MetaModel
from .testbed import SQUARE, NoiseModel, add_noise, evaluation_grid, ff_side, lhs_sample, test_function

__all__ = [
    "METHODS",
    "BenchmarkRow",
    "checkpoints",
    "worker_count",
    "adaptive_curve",
    "ff_curve",
    "lhs_curve",
    "run_benchmark",
]

log = logging.getLogger(__name__)

METHODS = ("adaptive", "ff", "lhs", "spacing-only")


@dataclass
class BenchmarkRow:
    function: str
    method: str
    n_points: int
    l2: float
    R0: float
    seed: Union[int, str]


def checkpoints(n_seed: int, n_p: int, iters: int) -> list:
    if n_seed < 1 or n_p < 1 or iters < 1:
        raise ParameterError("need n_seed, n_p and iters >= 1")
    return [n_seed + n_p * k for k in range(1, iters + 1)]


def worker_count() -> int:
    """Worker cap from ``MAXENT_DOE_THREADS`` (default 1)."""
    raw = os.environ.get("MAXENT_DOE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ParameterError(f"MAXENT_DOE_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ParameterError("MAXENT_DOE_THREADS must be at least 1")
    return n


class _Oracle:
    """Test function with optional noise; every call draws a fresh stream."""

    def __init__(self, fid: str, noise: Optional[NoiseModel], stream0: int = 0):
        self.f = test_function(fid)
        self.noise = noise
        self.stream = stream0

    def __call__(self, P):
        v = self.f(P)
        if self.noise is not None and self.noise.zeta > 0:
            v = add_noise(v, self.noise, scale=1.0, stream=self.stream)
            self.stream += 1
        return v


def _l2(model: MetaModel, truth: np.ndarray, grid: np.ndarray) -> float:
    return float(np.sqrt(np.mean((model.evaluate(grid) - truth) ** 2)))


def _fit_l2(P, v, domain, cfg, truth, grid) -> float:
    try:
        model = MetaModel(NodeSet(P, v, domain=domain), cfg.holmes, cfg.kde)
        return _l2(model, truth, grid)
    except MaxentDoeError as exc:
        log.warning("fit with %d nodes failed: %s", P.shape[0], exc)
        return float("nan")


def adaptive_curve(fid: str, cfg: DoeConfig, seed_positions, marks, domain: Domain = SQUARE,
                   noise: Optional[NoiseModel] = None):
    """``(n_points, l2)`` pairs of one DoE run sampled at ``marks``.

    Checkpoints the run never reached (aborted iteration) report ``nan``.
    """
    seed_positions = np.atleast_2d(np.asarray(seed_positions, dtype=float))
    n0 = seed_positions.shape[0]
    n_outer = int(np.ceil((max(marks) - n0) / cfg.n_per_batch))
    hist = run_doe(_Oracle(fid, noise), cfg, seed_positions, domain, n_outer=n_outer)
    grid = evaluation_grid(domain=domain)
    truth = test_function(fid)(grid)
    out = []
    for n in marks:
        out.append((n, _l2(hist.model(n), truth, grid) if n <= hist.n else float("nan")))
    return out


def ff_curve(fid: str, cfg: DoeConfig, marks, domain: Domain = SQUARE, noise: Optional[NoiseModel] = None):
    """Full-factorial designs with ``round(n^(1/d))`` points per axis at each mark."""
    grid = evaluation_grid(domain=domain)
    truth = test_function(fid)(grid)
    out = []
    for i, n in enumerate(marks):
        P = make_grid(domain, ff_side(n, domain.d)).points
        v = _Oracle(fid, noise, stream0=i)(P)
        out.append((P.shape[0], _fit_l2(P, v, domain, cfg, truth, grid)))
    return out


def lhs_curve(fid: str, cfg: DoeConfig, marks, seed: int, replicates: int = 100,
              domain: Domain = SQUARE, noise: Optional[NoiseModel] = None):
    """Per-replicate LHS errors, shape ``(replicates, len(marks))``.

    Replicate ``r`` uses seed ``seed + r``.  Fits that fail report ``nan``.
    """
    if replicates < 1:
        raise ParameterError("replicates must be at least 1")
    grid = evaluation_grid(domain=domain)
    truth = test_function(fid)(grid)

    def one(r):
        row = np.empty(len(marks))
        for j, n in enumerate(marks):
            P = domain.lower + lhs_sample(n, domain.d, seed + r) * domain.extent
            v = _Oracle(fid, noise, stream0=r * len(marks) + j)(P)
            row[j] = _fit_l2(P, v, domain, cfg, truth, grid)
        return row

    workers = worker_count()
    if workers == 1:
        rows = [one(r) for r in range(replicates)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, range(replicates)))
    return np.array(rows)


def run_benchmark(functions, methods, cfg: DoeConfig, seed_positions, seed: int = 0,
                  replicates: int = 100, domain: Domain = SQUARE,
                  noise: Optional[NoiseModel] = None, marks=None) -> list:
    """Rows of ``(function, method, n_points, l2, R0, seed)`` for every pairing.

    ``marks`` defaults to ``n_seed + k N_p`` for ``k = 1..n_outer``.  LHS
    contributes one row per replicate and checkpoint plus a ``mean`` row
    averaging the finite replicates.
    """
    seed_positions = np.atleast_2d(np.asarray(seed_positions, dtype=float))
    if marks is None:
        marks = checkpoints(seed_positions.shape[0], cfg.n_per_batch, max(cfg.n_outer, 1))
    rows = []
    for fid in functions:
        for method in methods:
            if method not in METHODS:
                raise ParameterError(f"unknown benchmark method {method!r}; use one of {', '.join(METHODS)}")
            if method in ("adaptive", "spacing-only"):
                c = cfg if method == "adaptive" else replace(cfg, objective="mackman")
                for n, e in adaptive_curve(fid, c, seed_positions, marks, domain, noise):
                    rows.append(BenchmarkRow(fid, method, n, e, cfg.R0, seed))
            elif method == "ff":
                for n, e in ff_curve(fid, cfg, marks, domain, noise):
                    rows.append(BenchmarkRow(fid, method, n, e, cfg.R0, seed))
            else:
                err = lhs_curve(fid, cfg, marks, seed, replicates, domain, noise)
                for r in range(err.shape[0]):
                    for j, n in enumerate(marks):
                        rows.append(BenchmarkRow(fid, method, n, float(err[r, j]), cfg.R0, seed + r))
                ok = np.isfinite(err)
                count = ok.sum(axis=0)
                mean = np.where(count > 0, np.where(ok, err, 0.0).sum(axis=0) / np.maximum(count, 1), np.nan)
                for j, n in enumerate(marks):
                    rows.append(BenchmarkRow(fid, method, n, float(mean[j]), cfg.R0, "mean"))
    return rows
