"""Domains, grids, node sets and nearest-neighbour queries."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError, ParameterError

__all__ = [
    "Domain",
    "NodeSet",
    "Grid",
    "make_grid",
    "knn",
    "fill_distance",
    "pairwise_distances",
]


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``[lower, upper]`` in ``R^d``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lower.ndim != 1 or lower.shape != upper.shape or lower.size < 1:
            raise ParameterError("domain bounds must be two vectors of equal length d >= 1")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ParameterError("domain bounds must be finite")
        if np.any(lower >= upper):
            raise ParameterError(f"domain needs lower < upper in every dimension, got {lower} / {upper}")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def cube(cls, lo: float, hi: float, d: int) -> "Domain":
        return cls(np.full(d, lo), np.full(d, hi))

    @classmethod
    def parse(cls, text: str) -> "Domain":
        """Parse ``"lo,hi;lo,hi"`` (one ``lo,hi`` pair per dimension)."""
        try:
            pairs = [tuple(float(v) for v in part.split(",")) for part in text.split(";") if part.strip()]
        except ValueError as exc:
            raise ParameterError(f"cannot parse domain {text!r}") from exc
        if not pairs or any(len(p) != 2 for p in pairs):
            raise ParameterError(f"domain must look like 'lo,hi;lo,hi', got {text!r}")
        return cls(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))

    def format(self) -> str:
        return ";".join(f"{lo!r},{hi!r}" for lo, hi in zip(self.lower.tolist(), self.upper.tolist()))

    @property
    def d(self) -> int:
        return self.lower.size

    @property
    def extent(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.extent))

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        slack = tol * self.extent
        return np.all((pts >= self.lower - slack) & (pts <= self.upper + slack), axis=1)

    def __eq__(self, other):
        if not isinstance(other, Domain):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))


def _as_points(points, d: Optional[int] = None) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1) if d in (None, 1) else pts.reshape(1, -1)
    if d is not None and pts.shape[1] != d:
        raise ParameterError(f"expected points of dimension {d}, got {pts.shape[1]}")
    return pts


@dataclass
class NodeSet:
    """Sample state: positions, measured values and per-node kernel data.

    ``h`` is the local spacing of each node and ``beta`` the kernel
    parameter derived from it; both stay ``None`` until assigned.
    """

    positions: np.ndarray
    values: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    domain: Optional[Domain] = field(default=None, compare=False)

    def __post_init__(self):
        d = self.domain.d if self.domain is not None else None
        self.positions = _as_points(self.positions, d)
        n = self.positions.shape[0]
        if n < 1:
            raise ParameterError("a node set needs at least one node")
        if not np.all(np.isfinite(self.positions)):
            raise DataError("node positions must be finite")
        for name in ("values", "h", "beta"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float).reshape(-1)
                if arr.size != n:
                    raise ParameterError(f"{name} has {arr.size} entries for {n} nodes")
                setattr(self, name, arr)
        if self.values is not None and not np.all(np.isfinite(self.values)):
            raise DataError("node values must be finite")
        for name in ("h", "beta"):
            arr = getattr(self, name)
            if arr is not None and np.any(arr <= 0):
                raise ParameterError(f"{name} must be strictly positive")
        if self.domain is not None and not np.all(self.domain.contains(self.positions, tol=1e-12)):
            raise DataError("node positions must lie inside the domain")
        dup = duplicate_pairs(self.positions, self._dup_tol())
        if dup:
            a, b = dup[0]
            raise DataError(f"nodes {a} and {b} coincide at {self.positions[a].tolist()}")

    def _dup_tol(self) -> float:
        if self.domain is not None:
            scale = self.domain.diameter
        else:
            span = np.ptp(self.positions, axis=0)
            scale = float(np.linalg.norm(span)) or 1.0
        return 1e-12 * scale

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]


def duplicate_pairs(positions: np.ndarray, tol: float, chunk: int = 1024) -> list:
    """Index pairs ``(a, b)`` with ``a < b`` lying within ``tol`` of each other."""
    pairs = []
    for start in range(0, positions.shape[0], chunk):
        block = pairwise_distances(positions[start:start + chunk], positions)
        a, b = np.nonzero(block <= tol)
        a = a + start
        keep = a < b
        pairs.extend(zip(a[keep].tolist(), b[keep].tolist()))
    return pairs


@dataclass(frozen=True)
class Grid:
    """Tensor grid; ``points`` are flattened with the first axis varying slowest."""

    counts: tuple
    points: np.ndarray

    def __len__(self):
        return self.points.shape[0]


def make_grid(domain: Domain, counts) -> Grid:
    counts = np.broadcast_to(np.asarray(counts, dtype=int), (domain.d,))
    if np.any(counts < 2):
        raise ParameterError("grid counts must be at least 2 per dimension")
    axes = [np.linspace(lo, hi, int(c)) for lo, hi, c in zip(domain.lower, domain.upper, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.reshape(-1) for m in mesh], axis=1)
    return Grid(tuple(int(c) for c in counts), points)


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix between rows of ``a`` and ``b``."""
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def knn(positions, query, k: int):
    """The ``k`` nearest nodes to ``query``, ascending by distance.

    Ties are broken by the lower node index.
    """
    pts = _as_points(positions)
    q = np.asarray(query, dtype=float).reshape(-1)
    if q.size != pts.shape[1]:
        raise ParameterError("query dimension does not match the nodes")
    if not 1 <= k <= pts.shape[0]:
        raise ParameterError(f"k must lie in [1, {pts.shape[0]}], got {k}")
    dist = np.linalg.norm(pts - q, axis=1)
    idx = np.argsort(dist, kind="stable")[:k]
    return idx, dist[idx]


def fill_distance(positions, domain: Domain, resolution=100, chunk: int = 4096) -> float:
    """Largest distance from a point of a dense grid to its nearest node."""
    pts = _as_points(positions, domain.d)
    if pts.shape[0] == 0:
        raise ParameterError("fill distance of an empty node set")
    grid = make_grid(domain, resolution).points
    best = 0.0
    for start in range(0, grid.shape[0], chunk):
        block = grid[start:start + chunk]
        nearest = pairwise_distances(block, pts).min(axis=1)
        best = max(best, float(nearest.max()))
    return best
