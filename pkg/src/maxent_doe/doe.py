"""Adaptive design of experiments with the objective ``S = Q_L Q_S Q_E``.

``Q_L`` rewards curvature of the metamodel (magnitude of its Laplacian),
``Q_S`` rewards distance from existing samples through a Gaussian RBF
"coverage" function ``H`` and ``Q_E`` interpolates leave-one-out errors.
Every factor is mapped affinely onto ``[eps, 1]`` over the search grid and
the next sample is the grid argmax of the product.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (ConditioningError, ConfigurationError, DataError, MaxentDoeError,
                     ParameterError)
from .geometry import Domain, Grid, NodeSet, fill_distance, make_grid, pairwise_distances
from .holmes import HolmesConfig, MetaModel
from .kde import KdeConfig

__all__ = [
    "DoeConfig",
    "SpacingModel",
    "ObjectiveField",
    "DoeIteration",
    "DoeHistory",
    "OBJECTIVES",
    "normalize_field",
    "spacing_kernel_param",
    "fit_spacing",
    "q_spacing",
    "loo_errors",
    "q_error",
    "search_grid",
    "build_objective",
    "propose_batch",
    "propose",
    "run_doe",
]

log = logging.getLogger(__name__)

# factors entering S for each objective flavour
OBJECTIVES = {
    "full": ("qL", "qS", "qE"),
    "mackman": ("qL", "qS"),
    "spacing": ("qS",),
}


@dataclass(frozen=True)
class DoeConfig:
    R0: float = 1.25
    spacing_tol: float = 1e-2
    eps_floor: float = 1e-4
    boundary_margin: float = 0.02
    search_grid: int = 41
    n_per_batch: int = 8
    n_outer: int = 1
    fill_resolution: int = 100
    objective: str = "full"
    cond_limit: float = 1e12
    holmes: HolmesConfig = field(default_factory=HolmesConfig)
    kde: KdeConfig = field(default_factory=KdeConfig)

    def __post_init__(self):
        if not self.R0 > 0:
            raise ParameterError("R0 must be positive")
        if not 0 < self.spacing_tol < 1:
            raise ParameterError("spacing_tol must lie in (0, 1)")
        if not 0 < self.eps_floor < 1:
            raise ParameterError("eps_floor must lie in (0, 1)")
        if not 0 <= self.boundary_margin < 0.5:
            raise ParameterError("boundary_margin must lie in [0, 0.5)")
        if self.search_grid < 2:
            raise ParameterError("search grid needs at least 2 points per dimension")
        if self.n_per_batch < 1 or self.n_outer < 0:
            raise ParameterError("need n_per_batch >= 1 and n_outer >= 0")
        if self.objective not in OBJECTIVES:
            raise ParameterError(f"objective must be one of {sorted(OBJECTIVES)}")


def normalize_field(values, eps_floor: float = 1e-4) -> np.ndarray:
    """Affine map of ``[min, max]`` onto ``[eps, 1]``.

    Values within ``1e-12 max(1, |max|)`` of the minimum count as the
    minimum, and a field whose spread is below that threshold carries no
    information and maps to 1 everywhere.
    """
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise DataError("cannot normalize a field with non-finite values")
    if v.size == 0:
        return v.copy()
    lo, hi = v.min(), v.max()
    thresh = 1e-12 * max(1.0, abs(hi))
    if hi - lo < thresh:
        return np.ones_like(v)
    v = np.where(v - lo < thresh, lo, v)
    # clip the last-ulp overshoot of the affine map
    return np.clip(eps_floor + (1.0 - eps_floor) * (v - lo) / (hi - lo), eps_floor, 1.0)


def spacing_kernel_param(positions, domain: Domain, R0: float = 1.25, tol: float = 1e-2,
                         resolution: int = 100) -> float:
    """``xi = -log(tol) / R_supp^2`` with ``R_supp = R0 d_fill / 2``."""
    if not 0 < tol < 1:
        raise ParameterError("tol must lie in (0, 1)")
    if not R0 > 0:
        raise ParameterError("R0 must be positive")
    r_supp = R0 * 0.5 * fill_distance(positions, domain, resolution)
    return float(-np.log(tol) / r_supp ** 2)


@dataclass
class SpacingModel:
    """``H(x) = sum_a nu_a exp(-xi |x - x_a|^2)`` with ``H(x_a) = rhs_a``."""

    positions: np.ndarray
    xi: float
    nu: np.ndarray
    condition: float = 1.0

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(X.shape[0])
        for start in range(0, X.shape[0], 4096):
            block = X[start:start + 4096]
            r = pairwise_distances(block, self.positions)
            out[start:start + 4096] = np.exp(-self.xi * r * r) @ self.nu
        return out


def fit_spacing(positions, xi: float, rhs=None, cond_limit: float = 1e12) -> SpacingModel:
    """Solve ``Phi nu = rhs`` (ones by default) for the Gaussian RBF weights.

    Raises :class:`ConditioningError` when the 2-norm condition number of
    ``Phi`` exceeds ``cond_limit`` or the system is exactly singular.
    """
    P = np.atleast_2d(np.asarray(positions, dtype=float))
    if not xi > 0:
        raise ParameterError("xi must be positive")
    n = P.shape[0]
    b = np.ones(n) if rhs is None else np.asarray(rhs, dtype=float).reshape(-1)
    if b.size != n:
        raise ParameterError("right-hand side length does not match the nodes")
    r = pairwise_distances(P, P)
    phi = np.exp(-xi * r * r)
    cond = float(np.linalg.cond(phi)) if n > 1 else 1.0
    if not np.isfinite(cond) or cond > cond_limit:
        raise ConditioningError(f"RBF system condition number {cond:.3e} exceeds {cond_limit:.1e}", condition=cond)
    try:
        nu = cho_solve(cho_factor(phi), b)
    except np.linalg.LinAlgError:
        # numerically indefinite: fall back to a pivoted LU solve
        try:
            nu = np.linalg.solve(phi, b)
        except np.linalg.LinAlgError as exc:
            raise ConditioningError(f"RBF system is singular (condition {cond:.3e})", condition=cond) from exc
    return SpacingModel(P.copy(), float(xi), nu, cond)


def q_spacing(model: SpacingModel, X) -> np.ndarray:
    """Raw spacing factor ``(1 - clamp(H, 0, 1))^2``."""
    return (1.0 - np.clip(model(X), 0.0, 1.0)) ** 2


def loo_errors(model: MetaModel, values=None):
    """Leave-one-out errors ``|u_a - u_I^(-a)(x_a)|``.

    Each reduced model is rebuilt from scratch, spacing included.  Returns
    ``(errors, failed)``; a node whose reduced solve fails gets the largest
    successful error and is flagged in ``failed``.
    """
    nodes = model.nodes
    v = nodes.values if values is None else np.asarray(values, dtype=float)
    n = nodes.n
    if n < 2:
        raise ParameterError("leave-one-out needs at least two nodes")
    loo = np.zeros(n)
    failed = np.zeros(n, dtype=bool)
    for a in range(n):
        keep = np.arange(n) != a
        try:
            sub = MetaModel(NodeSet(nodes.positions[keep], v[keep], domain=nodes.domain),
                            model.config, model.kde)
            loo[a] = abs(v[a] - sub.evaluate(nodes.positions[a:a + 1])[0])
        except MaxentDoeError as exc:
            log.warning("leave-one-out at node %d failed: %s", a, exc)
            failed[a] = True
    if failed.all():
        raise MaxentDoeError("every leave-one-out solve failed")
    if failed.any():
        loo[failed] = loo[~failed].max()
    return loo, failed


def q_error(model: MetaModel, loo_normalized, X, eps_floor: float = 1e-4) -> np.ndarray:
    """HOLMES interpolation of normalized LOO errors, clamped to ``[eps, 1]``."""
    loo_normalized = np.asarray(loo_normalized, dtype=float)
    if np.all(loo_normalized == loo_normalized[0]):
        # partition of unity makes this exact; skip the round-off
        return np.full(model._queries(X).shape[0], np.clip(loo_normalized[0], eps_floor, 1.0))
    return np.clip(model.interpolate(X, loo_normalized), eps_floor, 1.0)


def search_grid(domain: Domain, counts=41, margin: float = 0.02) -> Grid:
    """Full-domain grid minus the points closer than ``margin * extent`` to a face."""
    g = make_grid(domain, counts)
    slack = margin * domain.extent
    keep = np.all((g.points >= domain.lower + slack - 1e-12 * domain.extent)
                  & (g.points <= domain.upper - slack + 1e-12 * domain.extent), axis=1)
    pts = g.points[keep]
    if pts.shape[0] == 0:
        raise ConfigurationError("boundary margin leaves no search points")
    axes_kept = tuple(int(np.unique(pts[:, i]).size) for i in range(domain.d))
    return Grid(axes_kept, pts)


@dataclass
class ObjectiveField:
    grid: Grid
    qL: np.ndarray
    qS: np.ndarray
    qE: np.ndarray
    S: np.ndarray
    eps_floor: float = 1e-4
    objective: str = "full"
    xi: float = float("nan")
    loo: Optional[np.ndarray] = None
    loo_failed: Optional[np.ndarray] = None


def _laplacian_field(model: MetaModel, pts: np.ndarray) -> np.ndarray:
    dom = model.nodes.domain
    step = 1e-3 * dom.extent
    # stencils at the outermost grid points are shifted just inside the domain
    centres = np.clip(pts, dom.lower + step, dom.upper - step)
    return model.laplacian(centres, step)


def _combine(obj: str, parts: dict) -> np.ndarray:
    S = np.ones_like(parts["qS"])
    for name in OBJECTIVES[obj]:
        S = S * parts[name]
    return S


def build_objective(model: MetaModel, cfg: DoeConfig, grid: Optional[Grid] = None,
                    spacing_positions=None, loo=None, loo_failed=None, xi: Optional[float] = None) -> ObjectiveField:
    """Evaluate all three factors and their product over the search grid.

    ``spacing_positions`` defaults to the model nodes; the time-dependent
    driver passes a different set.  ``loo`` is computed when missing.
    """
    dom = model.nodes.domain
    if dom is None:
        raise ParameterError("the metamodel needs a domain")
    if grid is None:
        grid = search_grid(dom, cfg.search_grid, cfg.boundary_margin)
    pts = grid.points
    eps = cfg.eps_floor
    need = OBJECTIVES[cfg.objective]
    if "qL" in need:
        qL = normalize_field(_laplacian_field(model, pts), eps)
    else:
        qL = np.ones(pts.shape[0])
    if "qE" in need:
        if loo is None:
            loo, loo_failed = loo_errors(model)
        qE = q_error(model, normalize_field(loo, eps), pts, eps)
    else:
        qE = np.ones(pts.shape[0])
    sp = model.nodes.positions if spacing_positions is None else np.asarray(spacing_positions, dtype=float)
    if xi is None:
        xi = spacing_kernel_param(sp, dom, cfg.R0, cfg.spacing_tol, cfg.fill_resolution)
    qS = normalize_field(q_spacing(fit_spacing(sp, xi, cond_limit=cfg.cond_limit), pts), eps)
    S = _combine(cfg.objective, {"qL": qL, "qS": qS, "qE": qE})
    return ObjectiveField(grid, qL, qS, qE, S, eps, cfg.objective, xi, loo, loo_failed)


def _coincident(pts: np.ndarray, others: np.ndarray, tol: float) -> np.ndarray:
    if others.shape[0] == 0:
        return np.zeros(pts.shape[0], dtype=bool)
    return pairwise_distances(pts, others).min(axis=1) <= tol


def propose_batch(field: ObjectiveField, spacing_positions, n_p: int, domain: Domain,
                  cond_limit: float = 1e12) -> np.ndarray:
    """Pick ``n_p`` grid points, refitting only the spacing factor between picks.

    ``Q_L`` and ``Q_E`` stay frozen for the whole batch and ``xi`` keeps the
    value used in ``field``.  Grid points coinciding with a node or an
    earlier pick are never chosen; ties go to the first point in grid order.
    """
    if n_p < 1:
        raise ParameterError("n_p must be at least 1")
    pts = field.grid.points
    eps = field.eps_floor
    tol = 1e-12 * domain.diameter
    base = np.atleast_2d(np.asarray(spacing_positions, dtype=float))
    blocked = _coincident(pts, base, tol)
    picks = []
    qS = field.qS
    for step in range(n_p):
        if step:
            sp = np.vstack([base, np.array(picks)])
            qS = normalize_field(q_spacing(fit_spacing(sp, field.xi, cond_limit=cond_limit), pts), eps)
        S = _combine(field.objective, {"qL": field.qL, "qS": qS, "qE": field.qE})
        S = np.where(blocked, -np.inf, S)
        if not np.isfinite(S).any():
            raise ConfigurationError("every search point is already a node")
        best = int(np.argmax(S))
        picks.append(pts[best].copy())
        blocked[best] = True
    return np.array(picks)


def propose(model: MetaModel, cfg: DoeConfig, n_p: Optional[int] = None, grid: Optional[Grid] = None):
    """Objective field for ``model`` and the next batch drawn from it."""
    fld = build_objective(model, cfg, grid)
    batch = propose_batch(fld, model.nodes.positions, n_p or cfg.n_per_batch, model.nodes.domain, cfg.cond_limit)
    return batch, fld


@dataclass
class DoeIteration:
    index: int
    proposals: np.ndarray
    values: Optional[np.ndarray] = None
    loo_mean: float = float("nan")
    loo_max: float = float("nan")
    loo_failed: int = 0
    xi: float = float("nan")
    newton: dict = field(default_factory=dict)
    error: Optional[str] = None


@dataclass
class DoeHistory:
    domain: Domain
    config: DoeConfig
    positions: np.ndarray
    values: np.ndarray
    origin: np.ndarray  # outer iteration that added each node, -1 for the seed
    iterations: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def prefix(self, n: int):
        return self.positions[:n], self.values[:n]

    def model(self, n: Optional[int] = None) -> MetaModel:
        n = self.n if n is None else n
        return MetaModel(NodeSet(self.positions[:n], self.values[:n], domain=self.domain),
                         self.config.holmes, self.config.kde)

    @property
    def aborted(self) -> bool:
        return any(it.error for it in self.iterations)


def run_doe(oracle: Callable, cfg: DoeConfig, seed_positions, domain: Domain, seed_values=None,
            n_outer: Optional[int] = None, callback: Optional[Callable] = None) -> DoeHistory:
    """Outer DoE loop: fit, score, propose a batch, measure, repeat.

    ``oracle`` maps an ``(m, d)`` array of points to ``m`` values.  A failure
    inside an iteration is recorded on that iteration and ends the loop,
    keeping everything gathered so far.
    """
    P = np.atleast_2d(np.asarray(seed_positions, dtype=float))
    v = np.asarray(oracle(P) if seed_values is None else seed_values, dtype=float).reshape(-1)
    NodeSet(P, v, domain=domain)  # validates the seed
    hist = DoeHistory(domain, cfg, P.copy(), v.copy(), np.full(P.shape[0], -1))
    n_outer = cfg.n_outer if n_outer is None else n_outer
    for it in range(n_outer):
        rec = DoeIteration(it, np.empty((0, domain.d)))
        hist.iterations.append(rec)
        try:
            model = hist.model()
            batch, fld = propose(model, cfg)
            rec.proposals = batch
            rec.xi = fld.xi
            if fld.loo is not None:
                rec.loo_mean = float(fld.loo.mean())
                rec.loo_max = float(fld.loo.max())
                rec.loo_failed = int(fld.loo_failed.sum())
            rec.newton = model.newton_summary()
            new_v = np.asarray(oracle(batch), dtype=float).reshape(-1)
            if new_v.size != batch.shape[0] or not np.all(np.isfinite(new_v)):
                raise DataError("oracle returned malformed values")
            rec.values = new_v
        except Exception as exc:  # noqa: BLE001 - recorded, loop stops with partial history
            rec.error = f"{type(exc).__name__}: {exc}"
            log.error("DoE iteration %d aborted: %s", it, rec.error)
            break
        hist.positions = np.vstack([hist.positions, batch])
        hist.values = np.concatenate([hist.values, new_v])
        hist.origin = np.concatenate([hist.origin, np.full(batch.shape[0], it)])
        if callback is not None:
            callback(hist)
    return hist
