"""Higher-order local maximum-entropy (HOLMES) approximants.

Shape functions are ``w_a = w_a^+ - w_a^-`` with

    w_a^{+-}(x) = exp(-1 - beta_a |x - x_a|_p^p -+ sum_alpha lambda_alpha ((x - x_a)/h_g)^alpha)

where the sum runs over every multi-index up to the consistency order,
including the constant one.  The multipliers solve the consistency
conditions through a Newton iteration whose Jacobian carries a Polyak term
``|r| I``.  Heavy lifting happens in :mod:`maxent_doe._newton`.
"""

import logging
import warnings
from dataclasses import dataclass, field, replace
from itertools import combinations_with_replacement
from math import comb
from typing import Optional

import numpy as np

from . import _newton
from .errors import BoundaryProximityError, ConvergenceError, ParameterError, RankError
from .geometry import Domain, NodeSet, _as_points
from .kde import KdeConfig, nodal_spacing

__all__ = [
    "HolmesConfig",
    "LambdaSolution",
    "WeightMatrix",
    "MetaModel",
    "multi_indices",
    "basis_size",
    "gamma_for_norm",
]

log = logging.getLogger(__name__)


def gamma_for_norm(gamma0: float, p0: float, p: float, eps: float = 2e-16) -> float:
    """Locality ``gamma`` at norm ``p`` giving the same support radius as ``gamma0`` at ``p0``.

    ``gamma(p) = gamma0^(p/p0) * (-1 - log eps)^(1 - p/p0)``
    """
    if not (gamma0 > 0 and p0 > 0 and p > 0):
        raise ParameterError("gamma0, p0 and p must be positive")
    if not 0 < eps < 1:
        raise ParameterError("eps must lie in (0, 1)")
    t = p / p0
    return float(gamma0 ** t * (-1.0 - np.log(eps)) ** (1.0 - t))


def basis_size(d: int, order: int) -> int:
    """``D = binom(d + n, n)``, constant term included."""
    return comb(d + order, order)


def multi_indices(d: int, order: int) -> np.ndarray:
    """Exponents of all monomials of degree ``<= order``, constant first.

    Within each degree the rows follow graded lexicographic order, so for
    ``d = 2`` the first rows are ``(0,0), (1,0), (0,1), (2,0), (1,1), (0,2)``.
    """
    if d < 1 or order < 0:
        raise ParameterError("need d >= 1 and order >= 0")
    rows = []
    for deg in range(order + 1):
        for combo in combinations_with_replacement(range(d), deg):
            e = [0] * d
            for i in combo:
                e[i] += 1
            rows.append(e)
    return np.array(rows, dtype=np.int64).reshape(-1, d)


def _moment_table(d: int, order: int):
    """Exponents up to ``2 order`` and the row of ``e_i + e_j`` for every basis pair."""
    exps = multi_indices(d, order)
    exps2 = multi_indices(d, 2 * order)
    row = {tuple(e): i for i, e in enumerate(exps2)}
    pair = np.array([[row[tuple(a + b)] for b in exps] for a in exps], dtype=np.int64)
    return exps2, pair


@dataclass(frozen=True)
class HolmesConfig:
    p: float = 3.0
    order: int = 3
    gamma0: float = 0.8
    p0: float = 2.0
    h_g: Optional[float] = None
    newton_tol: float = 1e-10
    newton_warn_iters: int = 20
    newton_max_iters: int = 1000
    cutoff_eps: float = 2e-16
    polish: bool = True

    def __post_init__(self):
        if not self.p >= 1:
            raise ParameterError("p must be >= 1")
        if self.order < 0:
            raise ParameterError("order must be >= 0")
        if not self.gamma0 > 0:
            raise ParameterError("gamma0 must be positive")
        if self.h_g is not None and not self.h_g > 0:
            raise ParameterError("h_g must be positive")
        if not (self.newton_tol > 0 and self.newton_max_iters > 0 and self.newton_warn_iters > 0):
            raise ParameterError("solver tolerances must be positive")
        if not 0 < self.cutoff_eps < 1:
            raise ParameterError("cutoff_eps must lie in (0, 1)")

    @property
    def gamma(self) -> float:
        return gamma_for_norm(self.gamma0, self.p0, self.p, 2e-16)


@dataclass
class LambdaSolution:
    lam: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool


@dataclass
class WeightMatrix:
    """Shape-function values for a batch of queries in CSR layout.

    Row ``q`` holds ``weights[offsets[q]:offsets[q+1]]`` for the nodes
    ``indices[offsets[q]:offsets[q+1]]``.
    """

    offsets: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    lams: np.ndarray
    iterations: np.ndarray
    residuals: np.ndarray
    status: np.ndarray

    def dot(self, values) -> np.ndarray:
        v = np.ascontiguousarray(values, dtype=float)
        return _newton.csr_dot(self.offsets, self.indices, self.weights, v)

    def row(self, q: int):
        s = slice(self.offsets[q], self.offsets[q + 1])
        return self.indices[s], self.weights[s]

    def dense(self, n_nodes: int) -> np.ndarray:
        out = np.zeros((self.offsets.size - 1, n_nodes))
        for q in range(out.shape[0]):
            idx, w = self.row(q)
            out[q, idx] = w
        return out


@dataclass
class MetaModel:
    """HOLMES approximant bound to a node set.

    If ``nodes`` lacks ``h``/``beta`` they are assigned from the KDE
    spacing (``k`` clamped to ``N - 1``) and ``beta_a = gamma h_a^(-p)``.
    """

    nodes: NodeSet
    config: HolmesConfig = field(default_factory=HolmesConfig)
    kde: KdeConfig = field(default_factory=KdeConfig)
    stats: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        nodes = self.nodes
        cfg = self.config
        if nodes.h is None:
            if nodes.n == 1:
                # lone node: its spacing is the whole domain
                h = np.array([nodes.domain.volume ** (1 / nodes.d) if nodes.domain is not None else 1.0])
            else:
                kde = replace(self.kde, k=min(self.kde.k, nodes.n - 1))
                h = nodal_spacing(nodes.positions, kde)
            nodes = replace(nodes, h=h, beta=None)
        beta = cfg.gamma * nodes.h ** (-cfg.p)
        if nodes.beta is None or not np.allclose(nodes.beta, beta, rtol=1e-14, atol=0):
            nodes = replace(nodes, beta=beta)
        self.nodes = nodes
        if cfg.h_g is None:
            if nodes.domain is not None:
                vol = nodes.domain.volume
            else:
                vol = float(np.prod(np.ptp(nodes.positions, axis=0))) or 1.0
            self.h_g = (vol / nodes.n) ** (1.0 / nodes.d)
        else:
            self.h_g = float(cfg.h_g)
        self.exps = multi_indices(nodes.d, cfg.order)
        self._exps2, self._pair = _moment_table(nodes.d, cfg.order)
        self._log_cutoff = -np.log(cfg.cutoff_eps)

    @classmethod
    def build(cls, positions, values, domain: Optional[Domain] = None, config=None, kde=None) -> "MetaModel":
        ns = NodeSet(positions, values, domain=domain)
        return cls(ns, config or HolmesConfig(), kde or KdeConfig())

    @property
    def d(self) -> int:
        return self.nodes.d

    @property
    def n_basis(self) -> int:
        return self.exps.shape[0]

    def neighborhood_of_query(self, x) -> np.ndarray:
        q = _as_points(x, self.d).reshape(1, -1) if np.ndim(x) <= 1 else _as_points(x, self.d)
        offsets, indices = _newton.find_neighbors(q[:1], self.nodes.positions, self.nodes.beta,
                                                   float(self.config.p), self._log_cutoff)
        return indices[offsets[0]:offsets[1]]

    def weights(self, X, check: bool = True) -> WeightMatrix:
        """Shape functions at every row of ``X``.

        With ``check`` a rank-deficient neighbourhood raises :class:`RankError`
        and a failed solve raises :class:`ConvergenceError`; otherwise failures
        are only reported through ``status``.
        """
        cfg = self.config
        Q = np.ascontiguousarray(self._queries(X))
        pos = self.nodes.positions
        beta = self.nodes.beta
        if self.nodes.n == 1:
            n = Q.shape[0]
            return WeightMatrix(np.arange(n + 1, dtype=np.int64), np.zeros(n, dtype=np.int64), np.ones(n),
                                np.zeros((n, self.n_basis)), np.zeros(n, dtype=np.int64), np.zeros(n),
                                np.zeros(n, dtype=np.int64))
        offsets, indices = _newton.find_neighbors(Q, pos, beta, float(cfg.p), self._log_cutoff)
        w, lams, iters, resid, status = _newton.solve_batch(
            Q, pos, beta, float(cfg.p), self.h_g, self._exps2, self._pair, cfg.order, offsets, indices,
            cfg.newton_tol, cfg.newton_max_iters, cfg.polish)
        wm = WeightMatrix(offsets, indices, w, lams, iters, resid, status)
        self._record(wm)
        if check:
            self._raise_on_failure(Q, wm)
        return wm

    def _queries(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1) if self.d > 1 or X.size == 1 else X.reshape(-1, 1)
        if X.shape[1] != self.d:
            raise ParameterError(f"query dimension {X.shape[1]} does not match the model ({self.d})")
        return X

    def _record(self, wm: WeightMatrix):
        ok = wm.status == _newton.STATUS_OK
        n_slow = int(np.sum(wm.iterations[ok] > self.config.newton_warn_iters))
        s = self.stats
        s["queries"] = s.get("queries", 0) + wm.status.size
        s["failed"] = s.get("failed", 0) + int(np.sum(~ok))
        s["slow"] = s.get("slow", 0) + n_slow
        if ok.any():
            s["max_iterations"] = max(s.get("max_iterations", 0), int(wm.iterations[ok].max()))
            s["iteration_sum"] = s.get("iteration_sum", 0) + int(wm.iterations[ok].sum())
        if n_slow:
            log.debug("%d of %d Newton solves needed more than %d iterations",
                      n_slow, wm.status.size, self.config.newton_warn_iters)

    def _raise_on_failure(self, Q, wm: WeightMatrix):
        bad = np.flatnonzero(wm.status != _newton.STATUS_OK)
        if bad.size == 0:
            return
        q = int(bad[0])
        code = int(wm.status[q])
        if code == _newton.STATUS_RANK:
            count = int(wm.offsets[q + 1] - wm.offsets[q])
            raise RankError(
                f"only {count} nodes support the query {Q[q].tolist()}, order {self.config.order} needs {self.n_basis}",
                point=Q[q].copy(), count=count, required=self.n_basis)
        raise ConvergenceError(
            f"Newton solve failed at {Q[q].tolist()} (|r| = {wm.residuals[q]:.3e} after {int(wm.iterations[q])} iterations)",
            point=Q[q].copy(), residual_norm=float(wm.residuals[q]), iterations=int(wm.iterations[q]))

    def solve_lambda(self, x) -> LambdaSolution:
        Q = self._queries(x)[:1]
        wm = self.weights(Q, check=False)
        code = int(wm.status[0])
        if code == _newton.STATUS_RANK:
            self._raise_on_failure(Q, wm)
        sol = LambdaSolution(wm.lams[0].copy(), int(wm.iterations[0]), float(wm.residuals[0]),
                             code == _newton.STATUS_OK)
        if not sol.converged:
            self._raise_on_failure(Q, wm)
        if sol.iterations > self.config.newton_warn_iters:
            warnings.warn(f"Newton needed {sol.iterations} iterations at {Q[0].tolist()}", RuntimeWarning)
        return sol

    def shape_functions(self, x):
        """``(indices, weights)`` of the nodes supporting a single point."""
        wm = self.weights(self._queries(x)[:1])
        return wm.row(0)

    def interpolate(self, X, data, check: bool = True) -> np.ndarray:
        """Apply the shape functions at ``X`` to arbitrary nodal ``data``."""
        data = np.asarray(data, dtype=float).reshape(-1)
        if data.size != self.nodes.n:
            raise ParameterError(f"{data.size} nodal values for {self.nodes.n} nodes")
        return self.weights(X, check=check).dot(data)

    def evaluate(self, X) -> np.ndarray:
        if self.nodes.values is None:
            raise ParameterError("the node set carries no values")
        return self.interpolate(X, self.nodes.values)

    def __call__(self, X) -> np.ndarray:
        return self.evaluate(X)

    def laplacian(self, X, step=None, values=None) -> np.ndarray:
        """``|sum_i d^2 u_I / dx_i^2|`` by second-order central differences.

        ``step`` defaults to ``1e-3`` of the domain extent per dimension.  For
        ``order >= 1`` the affine least-squares trend of the data is removed
        first; the approximant reproduces it exactly, so the result is the
        same, but the finite differences no longer amplify round-off from
        the large linear part.
        """
        Q = self._queries(X)
        v = self.nodes.values if values is None else np.asarray(values, dtype=float).reshape(-1)
        if v is None:
            raise ParameterError("the node set carries no values")
        dom = self.nodes.domain
        if step is None:
            if dom is None:
                raise ParameterError("a step is required when the model has no domain")
            step = 1e-3 * dom.extent
        step = np.broadcast_to(np.asarray(step, dtype=float), (self.d,))
        if dom is not None:
            inside = np.all((Q - step >= dom.lower - 1e-12 * dom.extent) & (Q + step <= dom.upper + 1e-12 * dom.extent), axis=1)
            if not inside.all():
                bad = Q[np.flatnonzero(~inside)[0]]
                raise BoundaryProximityError(f"finite-difference stencil at {bad.tolist()} leaves the domain")
        if self.config.order >= 1:
            v = v - self._affine_fit(v)
        n = Q.shape[0]
        stencil = [Q]
        for i in range(self.d):
            e = np.zeros(self.d)
            e[i] = step[i]
            stencil += [Q + e, Q - e]
        u = self.interpolate(np.concatenate(stencil), v).reshape(-1, n)
        lap = np.zeros(n)
        for i in range(self.d):
            lap += (u[1 + 2 * i] - 2 * u[0] + u[2 + 2 * i]) / step[i] ** 2
        return np.abs(lap)

    def _affine_fit(self, v) -> np.ndarray:
        A = np.column_stack([np.ones(self.nodes.n), self.nodes.positions])
        coef, *_ = np.linalg.lstsq(A, v, rcond=None)
        return A @ coef

    def without(self, a: int) -> "MetaModel":
        """The model rebuilt on every node but ``a`` (spacing recomputed)."""
        keep = np.arange(self.nodes.n) != a
        ns = NodeSet(self.nodes.positions[keep],
                     None if self.nodes.values is None else self.nodes.values[keep],
                     domain=self.nodes.domain)
        return MetaModel(ns, self.config, self.kde)

    def newton_summary(self) -> dict:
        s = dict(self.stats)
        if s.get("queries"):
            ok = s["queries"] - s.get("failed", 0)
            s["mean_iterations"] = s.get("iteration_sum", 0) / ok if ok else float("nan")
        return s
