"""Adaptive designs for time-dependent responses.

A coarse full-factorial set of nodes is measured at every timestep; the
remaining nodes are re-proposed by the DoE engine from a metamodel whose
values have been projected one step ahead.  The axisymmetric drum
(:class:`WaveProblem`) serves as the analytic oracle.
"""

import enum
import logging
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, special

from .doe import DoeConfig, build_objective, propose_batch, search_grid
from .errors import DomainError, ParameterError, QuadratureError
from .geometry import Domain, NodeSet, make_grid
from .holmes import MetaModel

__all__ = [
    "ProjectionMethod",
    "WaveProblem",
    "TimeLevel",
    "TimeHistory",
    "TimedepResult",
    "bessel_j0_zeros",
    "wave_coefficients",
    "wave_solution",
    "backward_diff_rate",
    "project_values",
    "run_timedep_doe",
    "integrated_l2",
]

log = logging.getLogger(__name__)


class ProjectionMethod(enum.Enum):
    NONE = "none"
    FORWARD_EULER = "fe"
    BACKWARD_EULER = "be"
    EXPLICIT_MIDPOINT = "me"

    @classmethod
    def parse(cls, token) -> "ProjectionMethod":
        if isinstance(token, cls):
            return token
        try:
            return cls(str(token).lower())
        except ValueError:
            raise ParameterError(f"unknown projection method {token!r}; use none, fe, be or me") from None


def bessel_j0_zeros(count: int) -> np.ndarray:
    """First ``count`` positive zeros of ``J_0``."""
    if count < 1:
        raise ParameterError("count must be at least 1")
    return special.jn_zeros(0, count)


@dataclass
class WaveProblem:
    """Drum of radius ``R`` released from ``U (exp(-xi_ic r^2/R^2) - exp(-xi_ic))``."""

    R: float = float(np.sqrt(2.0))
    c: float = 1.0
    U: float = 1.0
    xi_ic: float = 80.0
    n_terms: int = 33
    z0: np.ndarray = field(init=False, repr=False)
    A: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not (self.R > 0 and self.c > 0):
            raise ParameterError("R and c must be positive")
        if self.n_terms < 1:
            raise ParameterError("n_terms must be at least 1")
        self.z0 = bessel_j0_zeros(self.n_terms)
        self.A = wave_coefficients(self)

    def initial(self, r):
        r = np.asarray(r, dtype=float)
        return self.U * (np.exp(-self.xi_ic * (r / self.R) ** 2) - np.exp(-self.xi_ic))

    @property
    def lam(self) -> np.ndarray:
        return self.z0 / self.R

    def __call__(self, points, t: float) -> np.ndarray:
        """Solution at Cartesian ``points`` (rows ``(x, y)``) and time ``t``."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        return wave_solution(self, np.hypot(P[:, 0], P[:, 1]), t)


def wave_coefficients(problem: WaveProblem, epsrel: float = 1e-12) -> np.ndarray:
    """Fourier-Bessel coefficients of the initial shape by adaptive quadrature.

    High modes have tiny coefficients, so the accuracy target is relative
    ``epsrel`` with an absolute floor of ``1e-16 U R^2``.
    """
    R = problem.R
    floor = 1e-16 * abs(problem.U) * R * R
    out = np.empty(problem.z0.size)
    for n, z in enumerate(problem.z0):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, err = integrate.quad(lambda r: problem.initial(r) * special.j0(z * r / R) * r,
                                      0.0, R, epsabs=floor, epsrel=epsrel, limit=400)
        if not np.isfinite(val) or err > max(epsrel * abs(val), floor) * 10:
            raise QuadratureError(f"coefficient {n + 1} did not converge (error estimate {err:.2e})")
        out[n] = val / (0.5 * R * R * special.j1(z) ** 2)
    return out


def wave_solution(problem: WaveProblem, r, t: float) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if np.any(r > problem.R * (1 + 1e-12)) or np.any(r < 0):
        raise DomainError(f"radius must lie in [0, {problem.R}]")
    lam = problem.lam
    modes = special.j0(np.multiply.outer(r, lam))
    return modes @ (problem.A * np.cos(problem.c * lam * t))


def _three_point_rate(u0, u1, u2, t0, t1, t2):
    """Derivative at ``t0`` of the quadratic through three levels ``t0 > t1 > t2``."""
    a = t0 - t1
    b = t0 - t2
    c = t1 - t2
    return u0 * (1 / a + 1 / b) - u1 * b / (a * c) + u2 * a / (b * c)


def backward_diff_rate(levels, dt: float):
    """Rate at the newest of up to three equally spaced levels, newest first.

    Returns ``(rate, order)`` where ``order`` is 2 for the three-point
    formula, 1 when only two levels exist and 0 (zero rate) for one.
    """
    if not dt > 0:
        raise ParameterError("dt must be positive")
    levels = [np.asarray(u, dtype=float) for u in levels]
    if not levels:
        raise ParameterError("at least one level is needed")
    if len(levels) >= 3:
        u0, u1, u2 = levels[:3]
        return (3 * u0 - 4 * u1 + u2) / (2 * dt), 2
    if len(levels) == 2:
        return (levels[0] - levels[1]) / dt, 1
    return np.zeros_like(levels[0]), 0


@dataclass
class TimeLevel:
    t: float
    positions: np.ndarray
    values: np.ndarray
    model: MetaModel

    def value_at(self, X) -> np.ndarray:
        """Measured value where ``X`` matches a node, metamodel estimate elsewhere."""
        X = np.atleast_2d(X)
        out = np.empty(X.shape[0])
        diff = np.abs(X[:, None, :] - self.positions[None, :, :]).max(axis=2)
        hit = diff <= 1e-12
        has = hit.any(axis=1)
        out[has] = self.values[np.argmax(hit[has], axis=1)]
        if (~has).any():
            out[~has] = self.model.evaluate(X[~has])
        return out


class TimeHistory:
    """The last three measured levels, newest first."""

    depth = 3

    def __init__(self, dt: float):
        if not dt > 0:
            raise ParameterError("dt must be positive")
        self.dt = float(dt)
        self._levels = deque(maxlen=self.depth)

    def push(self, level: TimeLevel):
        self._levels.appendleft(level)

    def __len__(self):
        return len(self._levels)

    @property
    def levels(self) -> list:
        return list(self._levels)

    def values_at(self, X) -> list:
        return [lv.value_at(X) for lv in self._levels]


def project_values(history: TimeHistory, method, positions):
    """Estimate values at ``t_n + dt`` for nodes at ``positions``.

    BE and ME need rates at future times; these come from the three-point
    backward stencil with the predicted level taking the newest slot.
    Returns ``(values, flagged)``; ``flagged`` is set when the history was
    too short for the requested scheme.
    """
    method = ProjectionMethod.parse(method)
    if len(history) == 0:
        raise ParameterError("projection needs at least one measured level")
    dt = history.dt
    levels = history.values_at(positions)
    times = [lv.t for lv in history.levels]
    u_n = levels[0]
    if method is ProjectionMethod.NONE:
        return u_n.copy(), False
    if len(levels) == 1:
        return u_n.copy(), True
    rate_n, order = backward_diff_rate(levels, dt)
    flagged = order < 2
    if method is ProjectionMethod.FORWARD_EULER:
        return u_n + rate_n * dt, flagged
    if method is ProjectionMethod.BACKWARD_EULER:
        t_new = times[0] + dt
        u_pred = u_n + rate_n * dt
        rate = _three_point_rate(u_pred, u_n, levels[1], t_new, times[0], times[1])
        return u_n + rate * dt, flagged
    t_half = times[0] + 0.5 * dt
    u_half = u_n + rate_n * 0.5 * dt
    rate = _three_point_rate(u_half, u_n, levels[1], t_half, times[0], times[1])
    return u_n + rate * dt, flagged


@dataclass
class TimedepResult:
    method: str
    dt: float
    update_interval: int
    times: np.ndarray
    l2: np.ndarray
    n_nodes: np.ndarray
    flagged_steps: int = 0
    persistent: Optional[np.ndarray] = None
    designs: list = field(default_factory=list, repr=False)

    @property
    def integrated(self) -> float:
        return integrated_l2(self.times, self.l2)


def integrated_l2(times, l2) -> float:
    return float(integrate.trapezoid(l2, times))


def _fit(positions, values, domain, cfg: DoeConfig) -> MetaModel:
    return MetaModel(NodeSet(positions, values, domain=domain), cfg.holmes, cfg.kde)


def run_timedep_doe(problem: WaveProblem, cfg: DoeConfig, dt: float = 0.1, t_end: float = 20.0,
                    update_interval: int = 1, method="none", persistent_counts: int = 5,
                    n_adaptive: int = 24, ff_counts: int = 7, eval_counts: int = 100,
                    domain: Optional[Domain] = None, keep_designs: bool = False) -> TimedepResult:
    """Simulate an adaptive (or full-factorial, ``method="ff"``) campaign.

    ``update_interval`` counts timesteps between re-proposals.  At ``t = 0``
    the adaptive nodes come from an unprojected DoE on the persistent grid.
    """
    if not dt > 0 or not t_end > 0:
        raise ParameterError("dt and t_end must be positive")
    if int(update_interval) != update_interval or update_interval < 1:
        raise ParameterError("update_interval must be a positive whole number of steps")
    update_interval = int(update_interval)
    domain = domain or Domain.cube(-1.0, 1.0, 2)
    n_steps = int(round(t_end / dt))
    times = np.arange(n_steps + 1) * dt
    grid = make_grid(domain, eval_counts).points
    r_grid = np.hypot(grid[:, 0], grid[:, 1])
    l2 = np.empty(n_steps + 1)
    counts = np.empty(n_steps + 1, dtype=int)
    designs = []

    if str(method).lower() == "ff":
        P = make_grid(domain, ff_counts).points
        # the node set never moves, so the weights on the grid are reused
        W = None
        for k, t in enumerate(times):
            v = problem(P, t)
            model = _fit(P, v, domain, cfg)
            if W is None:
                W = model.weights(grid)
            l2[k] = np.sqrt(np.mean((W.dot(v) - wave_solution(problem, r_grid, t)) ** 2))
            counts[k] = P.shape[0]
        return TimedepResult("ff", dt, update_interval, times, l2, counts)

    proj = ProjectionMethod.parse(method)
    base = make_grid(domain, persistent_counts).points
    sgrid = search_grid(domain, cfg.search_grid, cfg.boundary_margin)
    history = TimeHistory(dt)
    flagged = 0

    def propose_from(model: MetaModel) -> np.ndarray:
        fld = build_objective(model, cfg, sgrid, spacing_positions=base)
        return propose_batch(fld, base, n_adaptive, domain, cfg.cond_limit)

    boot = _fit(base, problem(base, 0.0), domain, cfg)
    adaptive = propose_from(boot)
    W = None
    for k, t in enumerate(times):
        P = np.vstack([base, adaptive])
        v = problem(P, t)
        model = _fit(P, v, domain, cfg)
        if W is None:
            W = model.weights(grid)
        l2[k] = np.sqrt(np.mean((W.dot(v) - wave_solution(problem, r_grid, t)) ** 2))
        counts[k] = P.shape[0]
        history.push(TimeLevel(t, P, v, model))
        if keep_designs:
            designs.append(P.copy())
        if k == n_steps or (k + 1) % update_interval:
            continue
        projected, flag = project_values(history, proj, P)
        flagged += int(flag)
        try:
            pmodel = _fit(P, projected, domain, cfg)
            adaptive = propose_from(pmodel)
        except Exception as exc:  # noqa: BLE001 - keep the previous design
            log.warning("proposal at t=%.3f failed, keeping nodes: %s", t, exc)
            continue
        W = None
    return TimedepResult(proj.value, dt, update_interval, times, l2, counts, flagged,
                         base, designs)
