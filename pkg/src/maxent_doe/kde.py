"""Boundary-corrected Gaussian KDE for the per-node spacing ``h_a``.

Each node looks at its ``k`` nearest neighbours, takes the tight box around
them as a local integration domain, sizes a diagonal Gaussian from how far
the node sits from the box faces, and rescales the kernel sum by the share of
Gaussian mass that falls inside the box.  ``h_a = rho'^(-1/d)``.

The per-node operations (:func:`neighborhood`, :func:`sigma_from_neighborhood`,
:func:`raw_density`, :func:`volume_correction`) spell the method out one node
at a time; :func:`nodal_spacing` is the vectorized production path and must
agree with them.
"""

from dataclasses import dataclass
from math import gamma as _gamma_fn

import numpy as np
from scipy.special import erf

from .errors import DegenerateGeometryError, ParameterError
from .geometry import pairwise_distances

__all__ = [
    "KdeConfig",
    "LocalNeighborhood",
    "neighborhood",
    "sigma_from_neighborhood",
    "raw_density",
    "volume_correction",
    "nodal_spacing",
    "local_average_spacing",
    "global_average_spacing",
]

_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class KdeConfig:
    """Settings for :func:`nodal_spacing`.

    ``faces`` selects which box faces enter the truncation correction:
    ``"nearest"`` uses only the closest face per dimension, ``"both"`` applies
    the same one-sided factor to the near and the far face.  ``half_cell``
    extends the box by half the distance to the centre's nearest distinct
    neighbour, since boundary nodes own half a cell beyond the outermost
    positions.
    """

    k: int = 50
    n_sigma: float = 3.0
    faces: str = "both"
    half_cell: bool = True

    def __post_init__(self):
        if self.k < 2:
            raise ParameterError("kde k must be at least 2")
        if not self.n_sigma > 0:
            raise ParameterError("n_sigma must be positive")
        if self.faces not in ("nearest", "both"):
            raise ParameterError("faces must be 'nearest' or 'both'")


@dataclass(frozen=True)
class LocalNeighborhood:
    center: int
    neighbors: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    near: np.ndarray
    far: np.ndarray
    pad: float = 0.0

    @property
    def members(self) -> np.ndarray:
        return np.concatenate([[self.center], self.neighbors])


def _sorted_neighbors(dist_row: np.ndarray, center: int) -> np.ndarray:
    row = dist_row.copy()
    row[center] = -1.0
    return np.argsort(row, kind="stable")[1:]


def neighborhood(positions, a: int, k: int) -> LocalNeighborhood:
    """Tight bounding box of node ``a`` and its ``k`` nearest neighbours."""
    pts = np.asarray(positions, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if not 1 <= k < n:
        raise ParameterError(f"neighbourhood needs 1 <= k < N (k={k}, N={n})")
    dist = np.linalg.norm(pts - pts[a], axis=1)
    nb = _sorted_neighbors(dist, a)[:k]
    members = pts[np.concatenate([[a], nb])]
    lower = members.min(axis=0)
    upper = members.max(axis=0)
    lo_gap = pts[a] - lower
    hi_gap = upper - pts[a]
    nonzero = dist[nb][dist[nb] > 0]
    pad = 0.5 * float(nonzero.min()) if nonzero.size else 0.0
    return LocalNeighborhood(
        center=int(a),
        neighbors=nb,
        lower=lower,
        upper=upper,
        near=np.minimum(lo_gap, hi_gap),
        far=np.maximum(lo_gap, hi_gap),
        pad=pad,
    )


def _fix_sigma(sigma: np.ndarray) -> np.ndarray:
    """Replace zero entries by the smallest positive one (per row)."""
    sigma = np.array(sigma, dtype=float, copy=True)
    flat = sigma.reshape(-1, sigma.shape[-1])
    for row in flat:
        pos = row[row > 0]
        if pos.size == 0:
            raise DegenerateGeometryError("neighbourhood has zero extent in every dimension")
        row[row <= 0] = pos.min()
    return flat.reshape(sigma.shape)


def sigma_from_neighborhood(nb: LocalNeighborhood, n_sigma: float) -> np.ndarray:
    """Kernel widths ``max|x_a - face| / n_sigma`` per dimension."""
    return _fix_sigma(nb.far / n_sigma)


def raw_density(positions, nb: LocalNeighborhood, sigma) -> float:
    """Normalized Gaussian kernel sum over the neighbourhood, centre included."""
    pts = np.asarray(positions, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    d = pts.shape[1]
    diff = pts[nb.members] - pts[nb.center]
    norm = (2 * np.pi) ** (-d / 2) / np.prod(sigma)
    return float(norm * np.exp(-0.5 * np.sum((diff / sigma) ** 2, axis=1)).sum())


def _face_mass(distance, sigma):
    return 0.5 * (erf(distance / (sigma * _SQRT2)) + 1.0)


def volume_correction(nb: LocalNeighborhood, sigma, faces: str = "nearest", pad: float = 0.0) -> float:
    """Factor ``V_R / V_box >= 1`` restoring Gaussian mass cut off by the box."""
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    ratio = np.prod(_face_mass(nb.near + pad, sigma))
    if faces == "both":
        ratio *= np.prod(_face_mass(nb.far + pad, sigma))
    elif faces != "nearest":
        raise ParameterError("faces must be 'nearest' or 'both'")
    return float(1.0 / ratio)


def nodal_spacing(positions, cfg: KdeConfig = KdeConfig(), chunk: int = 512) -> np.ndarray:
    """Adaptive spacing ``h_a`` for every node."""
    pts = np.asarray(positions, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n, d = pts.shape
    k = cfg.k
    if n <= k:
        raise ParameterError(f"nodal_spacing needs more than k={k} nodes, got {n}")
    h = np.empty(n)
    for start in range(0, n, chunk):
        rows = np.arange(start, min(start + chunk, n))
        dist = pairwise_distances(pts[rows], pts)
        dist[np.arange(rows.size), rows] = -1.0
        order = np.argsort(dist, axis=1, kind="stable")
        nb = order[:, 1:k + 1]
        members = np.concatenate([rows[:, None], nb], axis=1)
        mpos = pts[members]  # (m, k+1, d)
        lower = mpos.min(axis=1)
        upper = mpos.max(axis=1)
        center = pts[rows]
        lo_gap = center - lower
        hi_gap = upper - center
        near = np.minimum(lo_gap, hi_gap)
        far = np.maximum(lo_gap, hi_gap)
        sigma = far / cfg.n_sigma
        if np.any(sigma <= 0):
            sigma = _fix_sigma(sigma)
        if cfg.half_cell:
            nbd = np.take_along_axis(dist, nb, axis=1)
            nbd = np.where(nbd > 0, nbd, np.inf)
            pad = 0.5 * nbd.min(axis=1)
            pad = np.where(np.isfinite(pad), pad, 0.0)[:, None]
        else:
            pad = 0.0
        diff = (mpos - center[:, None, :]) / sigma[:, None, :]
        rho = (2 * np.pi) ** (-d / 2) / np.prod(sigma, axis=1) * np.exp(-0.5 * np.sum(diff * diff, axis=2)).sum(axis=1)
        mass = np.prod(_face_mass(near + pad, sigma), axis=1)
        if cfg.faces == "both":
            mass *= np.prod(_face_mass(far + pad, sigma), axis=1)
        h[rows] = (rho / mass) ** (-1.0 / d)
    return h


def _unit_ball_volume(d: int) -> float:
    return np.pi ** (d / 2) / _gamma_fn(d / 2 + 1)


def local_average_spacing(positions, k: int) -> np.ndarray:
    """Rectangular-window baseline ``h_a = (V_k / k)^(1/d)``.

    The ball is centred on the node and reaches its ``(k-1)``-th neighbour,
    so it holds ``k`` nodes counting the centre.
    """
    pts = np.asarray(positions, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n, d = pts.shape
    if not 2 <= k <= n:
        raise ParameterError(f"local average needs 2 <= k <= N (k={k}, N={n})")
    dist = pairwise_distances(pts, pts)
    radius = np.sort(dist, axis=1)[:, k - 1]
    vol = _unit_ball_volume(d) * radius ** d
    return (vol / k) ** (1.0 / d)


def global_average_spacing(volume: float, n: int, d: int) -> float:
    return (volume / n) ** (1.0 / d)
