"""Analytic test functions, noise, baseline samplers and error metrics.

Every test function is posed on ``[-1, 1]^2``: points are mapped affinely
onto the function's native box and the result is scaled by ``A`` so that
``max |f| = 1`` over the square.

Random numbers come from :class:`CounterRNG` (Philox4x64 raw words turned
into doubles, Box-Muller for normals) so a seed pins every dataset
independently of numpy's default generator.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .doe import SpacingModel, fit_spacing
from .errors import DomainError, ParameterError
from .geometry import Domain, make_grid

__all__ = [
    "TEST_FUNCTIONS",
    "NATIVE_DOMAINS",
    "SQUARE",
    "CounterRNG",
    "NoiseModel",
    "test_function",
    "eval_test_function",
    "amplitude_scale",
    "add_noise",
    "l2_error",
    "lhs_sample",
    "ff_design",
    "ff_side",
    "clumped_points",
    "gaussian_interpolant_baseline",
    "evaluation_grid",
]

SQUARE = Domain.cube(-1.0, 1.0, 2)


def _t0(x, y):
    return x + y


def _t1(x, y):
    return np.exp(-3 * (x * x + y * y))


def _t2(x, y):
    return np.log(1 + 100 * (y - x * x) ** 2 + (1 - x) ** 2)


def _t3(x, y):
    return (2 + 0.01 * (y - x * x) ** 2 + (1 - x) ** 2 + 2 * (2 - y) ** 2
            + 7 * np.sin(0.5 * x) * np.sin(0.7 * x * y))


def _t4(x, y):
    return (np.cos(6 * (x - 0.5)) + 3.1 * np.abs(x - 0.7) + 2 * (x - 0.5)
            + np.sin(1 / (np.abs(x - 0.5) + 0.31)) + y / 2)


def _t5(x, y):
    return np.cos(np.sqrt(x * x + y * y))


def _t6(x, y):
    return np.sin(x) * np.sin(y)


def _t7(x, y):
    # Branin
    return (y - 5.1 * (x / (2 * np.pi)) ** 2 + 5 * x / np.pi - 6) ** 2 + 10 * (1 - np.pi / 8) * np.cos(x) + 10


def _t8(x, y):
    # Himmelblau
    return (x * x + y - 11) ** 2 + (x + y * y - 7) ** 2


def _t9(x, y):
    # Rastrigin
    return 20 + x * x + y * y - 10 * (np.cos(2 * np.pi * x) + np.cos(2 * np.pi * y))


TEST_FUNCTIONS = {
    "T0": _t0, "T1": _t1, "T2": _t2, "T3": _t3, "T4": _t4,
    "T5": _t5, "T6": _t6, "T7": _t7, "T8": _t8, "T9": _t9,
}

NATIVE_DOMAINS = {
    "T0": ((-1, 1), (-1, 1)),
    "T1": ((-1, 1), (-1, 1)),
    "T2": ((-1, 1), (-1, 1)),
    "T3": ((0, 5), (0, 5)),
    "T4": ((0, 1), (0, 1)),
    "T5": ((-5, 5), (-5, 5)),
    "T6": ((-3, 3), (-3, 3)),
    "T7": ((0, 15), (-5, 10)),
    "T8": ((-4, 4), (-4, 4)),
    "T9": ((-1, 1), (-1, 1)),
}

_ANALYTIC_SCALE = {"T0": 0.5, "T1": 1.0}


def _check_id(fid: str) -> str:
    key = str(fid).upper()
    if key not in TEST_FUNCTIONS:
        raise ParameterError(f"unknown test function {fid!r}; expected one of T0..T9")
    return key


def _raw_on_square(fid: str, x, y):
    (ax, bx), (ay, by) = NATIVE_DOMAINS[fid]
    xs = ax + (np.asarray(x, dtype=float) + 1) * 0.5 * (bx - ax)
    ys = ay + (np.asarray(y, dtype=float) + 1) * 0.5 * (by - ay)
    return TEST_FUNCTIONS[fid](xs, ys)


@lru_cache(maxsize=None)
def amplitude_scale(fid: str, probe: int = 400) -> float:
    """``A = 1 / max |f|`` over a ``probe x probe`` grid of the square."""
    fid = _check_id(fid)
    if fid in _ANALYTIC_SCALE:
        return _ANALYTIC_SCALE[fid]
    t = np.linspace(-1, 1, probe)
    X, Y = np.meshgrid(t, t, indexing="ij")
    return float(1.0 / np.abs(_raw_on_square(fid, X, Y)).max())


def eval_test_function(fid: str, x, y):
    """Scaled value of test function ``fid`` at ``(x, y)`` in ``[-1, 1]^2``."""
    fid = _check_id(fid)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    tol = 1e-12
    if np.any(np.abs(x) > 1 + tol) or np.any(np.abs(y) > 1 + tol):
        raise DomainError(f"{fid} is defined on [-1, 1]^2 only")
    return amplitude_scale(fid) * _raw_on_square(fid, x, y)


def test_function(fid: str) -> Callable:
    """Vectorized ``f(points)`` for ``(m, 2)`` point arrays."""
    fid = _check_id(fid)

    def f(points):
        P = np.atleast_2d(np.asarray(points, dtype=float))
        return eval_test_function(fid, P[:, 0], P[:, 1])

    f.__name__ = fid
    return f


test_function.__test__ = False  # keep pytest from collecting it


class CounterRNG:
    """Seeded uniforms and normals from a counter-based generator.

    Draws are Philox4x64 output words ``w`` mapped to ``(w >> 11) * 2^-53``;
    normals use the Box-Muller transform on consecutive pairs.  Separate
    ``stream`` numbers give independent sequences for the same seed.
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ParameterError("seed and stream must be non-negative")
        self._gen = np.random.Philox(key=[int(seed) & (2 ** 64 - 1), int(stream) & (2 ** 64 - 1)])

    def uniform(self, n: int) -> np.ndarray:
        raw = np.asarray(self._gen.random_raw(int(n)), dtype=np.uint64).reshape(-1)
        return (raw >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def normal(self, n: int) -> np.ndarray:
        m = (int(n) + 1) // 2
        u = self.uniform(2 * m).reshape(m, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        th = 2 * np.pi * u[:, 1]
        return np.column_stack([r * np.cos(th), r * np.sin(th)]).reshape(-1)[:n]


@dataclass(frozen=True)
class NoiseModel:
    """``multiplicative``: ``f (1 + zeta G)``; ``additive``: ``f + zeta max|f| G``."""

    kind: str = "additive"
    zeta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("multiplicative", "additive"):
            raise ParameterError("noise kind must be 'multiplicative' or 'additive'")
        if not self.zeta >= 0:
            raise ParameterError("zeta must be non-negative")


def add_noise(values, model: NoiseModel, scale: float = 1.0, stream: int = 0) -> np.ndarray:
    """Noisy copy of ``values``; ``scale`` is ``max|f|`` for the additive model."""
    v = np.asarray(values, dtype=float)
    if model.zeta == 0:
        return v.copy()
    g = CounterRNG(model.seed, stream).normal(v.size).reshape(v.shape)
    if model.kind == "multiplicative":
        return v * (1 + model.zeta * g)
    return v + model.zeta * scale * g


def evaluation_grid(n: int = 100, domain: Domain = SQUARE) -> np.ndarray:
    return make_grid(domain, n).points


def l2_error(approx, truth, grid=None) -> float:
    """Root mean square difference over ``grid``.

    ``approx`` and ``truth`` are callables on the grid points or arrays of
    values already evaluated there.
    """
    pts = evaluation_grid() if grid is None else (grid.points if hasattr(grid, "points") else np.asarray(grid))
    a = approx(pts) if callable(approx) else np.asarray(approx, dtype=float)
    t = truth(pts) if callable(truth) else np.asarray(truth, dtype=float)
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(t)) ** 2)))


def lhs_sample(n: int, d: int, seed: int) -> np.ndarray:
    """Latin hypercube sample of ``n`` points in ``[0, 1)^d``."""
    if n < 1 or d < 1:
        raise ParameterError("need n >= 1 and d >= 1")
    rng = CounterRNG(seed, stream=1)
    out = np.empty((n, d))
    for i in range(d):
        perm = np.argsort(rng.uniform(n), kind="stable")
        out[:, i] = (perm + rng.uniform(n)) / n
    return np.minimum(out, np.nextafter(1.0, 0.0))


def ff_side(n_points: int, d: int = 2) -> int:
    """Points per axis of the full-factorial design closest to ``n_points``."""
    return max(2, int(round(n_points ** (1.0 / d))))


def ff_design(domain: Domain, counts) -> np.ndarray:
    return make_grid(domain, counts).points


def clumped_points(n: int, n_centers: int, domain: Domain, seed: int) -> np.ndarray:
    """``n`` points normally scattered around ``n_centers`` clump centres.

    Centres sit at the cell midpoints of a near-square grid; the standard
    deviation is a quarter of the centre spacing.  Samples falling outside
    the domain are redrawn.
    """
    if n < 1 or n_centers < 1:
        raise ParameterError("need n >= 1 and n_centers >= 1")
    d = domain.d
    per_axis = int(np.ceil(n_centers ** (1.0 / d)))
    axis = (np.arange(per_axis) + 0.5) / per_axis
    mesh = np.stack([m.reshape(-1) for m in np.meshgrid(*([axis] * d), indexing="ij")], axis=1)
    centres = domain.lower + mesh[:n_centers] * domain.extent
    std = 0.25 * domain.extent / per_axis
    rng = CounterRNG(seed, stream=2)
    owner = np.arange(n) % n_centers
    pts = centres[owner] + rng.normal(n * d).reshape(n, d) * std
    bad = ~domain.contains(pts)
    while bad.any():
        k = int(bad.sum())
        pts[bad] = centres[owner[bad]] + rng.normal(k * d).reshape(k, d) * std
        bad = ~domain.contains(pts)
    return pts


def gaussian_interpolant_baseline(positions, values, xi: float, cond_limit: float = np.inf) -> SpacingModel:
    """Exact Gaussian RBF interpolant ``sum nu_a exp(-xi |x - x_a|^2)`` of ``values``.

    With a fixed ``xi`` the system degrades as nodes are added; by default no
    condition limit is imposed, so the baseline shows that degradation
    instead of refusing to solve.
    """
    return fit_spacing(positions, xi, rhs=values, cond_limit=cond_limit)
