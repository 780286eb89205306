"""Persistent batch-experiment sessions.

A session holds the domain, the DoE settings, every measured node and the
proposals still waiting for a measurement.  It is stored as one JSON
document with top-level keys ``version``, ``domain``, ``config``, ``nodes``,
``pending`` and ``diagnostics``.  Point exchange uses CSV files with header
``x1,...,xd,value`` written at 17 significant digits.
"""

import csv
import io
import json
import os
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .doe import DoeConfig, propose
from .errors import DataError, ParameterError, StateError
from .geometry import Domain, NodeSet, make_grid
from .holmes import HolmesConfig, MetaModel
from .kde import KdeConfig
from .testbed import NoiseModel, add_noise, lhs_sample, test_function

__all__ = [
    "SESSION_VERSION",
    "NodeRecord",
    "DoeSession",
    "parse_seed_design",
    "config_to_dict",
    "config_from_dict",
    "read_points_csv",
    "write_points_csv",
    "session_lock",
]

SESSION_VERSION = "maxent-doe-session/1"
MATCH_TOL = 1e-9


def config_to_dict(cfg: DoeConfig) -> dict:
    out = asdict(cfg)
    if out["cond_limit"] == float("inf"):
        out["cond_limit"] = "inf"
    return out


def config_from_dict(data: dict) -> DoeConfig:
    data = dict(data)
    holmes = HolmesConfig(**data.pop("holmes", {}))
    kde = KdeConfig(**data.pop("kde", {}))
    if data.get("cond_limit") == "inf":
        data["cond_limit"] = float("inf")
    try:
        return DoeConfig(holmes=holmes, kde=kde, **data)
    except TypeError as exc:
        raise ParameterError(f"bad configuration: {exc}") from None


@dataclass
class NodeRecord:
    position: list
    value: Optional[float] = None
    iteration: int = -1
    origin: str = "seed"


@dataclass
class DoeSession:
    """Nodes, pending proposals and settings of one experimental campaign.

    ``function`` and ``noise`` are set in analytic mode, where pending points
    can be evaluated without a measurement file.  ``iteration`` counts
    completed propose/record cycles.
    """

    domain: Domain
    config: DoeConfig = field(default_factory=DoeConfig)
    nodes: list = field(default_factory=list)
    pending: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    iteration: int = 0
    function: Optional[str] = None
    noise: Optional[NoiseModel] = None
    noise_calls: int = 0

    # -- state -----------------------------------------------------------------
    def positions(self) -> np.ndarray:
        return np.array([n.position for n in self.nodes], dtype=float).reshape(-1, self.domain.d)

    def values(self) -> np.ndarray:
        return np.array([n.value for n in self.nodes], dtype=float)

    def pending_positions(self) -> np.ndarray:
        return np.array([n.position for n in self.pending], dtype=float).reshape(-1, self.domain.d)

    def model(self) -> MetaModel:
        if not self.nodes:
            raise StateError("the session has no measured nodes yet; record the seed design first")
        return MetaModel(NodeSet(self.positions(), self.values(), domain=self.domain),
                         self.config.holmes, self.config.kde)

    def evaluate(self, P) -> np.ndarray:
        """Analytic-mode measurement of ``P`` (noise drawn from a fresh stream)."""
        if self.function is None:
            raise StateError("the session has no analytic function; record measured values instead")
        v = test_function(self.function)(P)
        if self.noise is not None and self.noise.zeta > 0:
            v = add_noise(v, self.noise, scale=1.0, stream=self.noise_calls)
            self.noise_calls += 1
        return v

    # -- commands --------------------------------------------------------------
    def add_seed(self, P, evaluate: bool):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        NodeSet(P, domain=self.domain)  # rejects duplicates and outside points
        if evaluate:
            v = self.evaluate(P)
            self.nodes += [NodeRecord(p.tolist(), float(x), -1, "seed") for p, x in zip(P, v)]
        else:
            self.pending += [NodeRecord(p.tolist(), None, -1, "seed") for p in P]

    def propose(self, n_p: Optional[int] = None) -> np.ndarray:
        if self.pending:
            raise StateError(f"{len(self.pending)} proposals are still pending; run 'record' first")
        model = self.model()
        batch, fld = propose(model, self.config, n_p)
        self.pending = [NodeRecord(p.tolist(), None, self.iteration, "adaptive") for p in batch]
        diag = {"iteration": self.iteration, "n_nodes": len(self.nodes), "n_proposed": int(batch.shape[0]),
                "xi": fld.xi, "newton": model.newton_summary()}
        if fld.loo is not None:
            diag.update(loo_mean=float(fld.loo.mean()), loo_max=float(fld.loo.max()),
                        loo_failed=int(fld.loo_failed.sum()))
        self.diagnostics.append(diag)
        return batch

    def record(self, P, v) -> int:
        """Move matching pending proposals to the node list; returns how many."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        v = np.asarray(v, dtype=float).reshape(-1)
        if P.shape[0] != v.size:
            raise DataError("every recorded point needs one value")
        if P.size and P.shape[1] != self.domain.d:
            raise DataError(f"recorded points have {P.shape[1]} coordinates, the domain has {self.domain.d}")
        if not np.all(np.isfinite(v)):
            raise DataError("recorded values must be finite")
        pend = self.pending_positions()
        taken = set()
        hits = []
        bad = []
        for i, p in enumerate(P):
            if pend.shape[0]:
                dist = np.abs(pend - p).max(axis=1)
                cand = [j for j in np.flatnonzero(dist <= MATCH_TOL) if j not in taken]
            else:
                cand = []
            if not cand:
                bad.append(p.tolist())
                continue
            taken.add(int(cand[0]))
            hits.append((int(cand[0]), float(v[i])))
        if bad:
            raise DataError(f"{len(bad)} recorded points match no pending proposal: {bad}")
        for j, val in hits:
            rec = self.pending[j]
            self.nodes.append(NodeRecord(rec.position, val, rec.iteration, rec.origin))
        was_adaptive = any(r.origin == "adaptive" for r in self.pending)
        self.pending = [r for j, r in enumerate(self.pending) if j not in taken]
        if not self.pending and was_adaptive:
            self.iteration += 1
        return len(hits)

    def record_analytic(self) -> int:
        P = self.pending_positions()
        if P.shape[0] == 0:
            return 0
        return self.record(P, self.evaluate(P))

    # -- persistence -------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "version": SESSION_VERSION,
            "domain": self.domain.format(),
            "config": {
                "doe": config_to_dict(self.config),
                "function": self.function,
                "noise": None if self.noise is None else asdict(self.noise),
                "noise_calls": self.noise_calls,
                "iteration": self.iteration,
            },
            "nodes": [asdict(n) for n in self.nodes],
            "pending": [asdict(n) for n in self.pending],
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DoeSession":
        if data.get("version") != SESSION_VERSION:
            raise DataError(f"unsupported session version {data.get('version')!r}")
        try:
            cfg = data["config"]
            noise = cfg.get("noise")
            s = cls(
                domain=Domain.parse(data["domain"]),
                config=config_from_dict(cfg["doe"]),
                nodes=[NodeRecord(**n) for n in data["nodes"]],
                pending=[NodeRecord(**n) for n in data["pending"]],
                diagnostics=list(data["diagnostics"]),
                iteration=int(cfg.get("iteration", 0)),
                function=cfg.get("function"),
                noise=None if noise is None else NoiseModel(**noise),
                noise_calls=int(cfg.get("noise_calls", 0)),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed session document: {exc}") from None
        if any(n.value is None for n in s.nodes):
            raise DataError("a recorded node has no value")
        if any(n.value is not None for n in s.pending):
            raise DataError("a pending proposal already carries a value")
        return s

    def save(self, path):
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "DoeSession":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise StateError(f"session file {path} does not exist; run 'init' first") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"session file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)


@contextmanager
def session_lock(path):
    """Exclusive lock file ``<session>.lock`` held while a command mutates a session."""
    lock = Path(str(path) + ".lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StateError(f"session {path} is locked by another process ({lock} exists)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def parse_seed_design(design: str, domain: Domain) -> np.ndarray:
    """Seed points from ``ff:5x5``, ``lhs:25:seed=7`` or ``points:<file.csv>``."""
    kind, _, rest = design.partition(":")
    kind = kind.strip().lower()
    if kind == "ff":
        try:
            counts = [int(c) for c in rest.lower().split("x")]
        except ValueError:
            raise ParameterError(f"cannot parse full-factorial counts in {design!r}") from None
        if len(counts) == 1:
            counts = counts * domain.d
        if len(counts) != domain.d:
            raise ParameterError(f"{design!r} gives {len(counts)} counts for a {domain.d}-d domain")
        return make_grid(domain, counts).points
    if kind == "lhs":
        parts = rest.split(":")
        seed = None
        try:
            n = int(parts[0])
            for extra in parts[1:]:
                key, _, val = extra.partition("=")
                if key.strip() != "seed":
                    raise ValueError
                seed = int(val)
        except ValueError:
            raise ParameterError(f"cannot parse LHS design {design!r}; use lhs:N:seed=S") from None
        if seed is None:
            raise ParameterError("LHS seed designs need an explicit seed, e.g. lhs:25:seed=7")
        return domain.lower + lhs_sample(n, domain.d, seed) * domain.extent
    if kind == "points":
        P, _ = read_points_csv(rest, with_values=False)
        return P
    raise ParameterError(f"unknown seed design {design!r}; use ff:AxB, lhs:N:seed=S or points:FILE")


def read_points_csv(source, with_values: bool = True):
    """``(points, values)`` from a CSV with header ``x1,...,xd[,value]``."""
    if isinstance(source, (str, Path)):
        try:
            text = Path(source).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ParameterError(f"cannot read {source}") from None
    else:
        text = source.read()
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError("the CSV file is empty")
    header = [c.strip() for c in rows[0]]
    has_value = bool(header) and header[-1] == "value"
    coords = header[:-1] if has_value else header
    if not coords or coords != [f"x{i + 1}" for i in range(len(coords))]:
        raise DataError(f"unexpected CSV header {rows[0]}; expected x1,...,xd,value")
    if with_values and not has_value:
        raise DataError("the CSV file has no 'value' column")
    # a proposals file has empty value cells, so values are only parsed when wanted
    width = len(header) if with_values else len(coords)
    try:
        data = np.array([[float(c) for c in r[:width]] for r in rows[1:]], dtype=float).reshape(-1, width)
    except ValueError as exc:
        raise DataError(f"non-numeric entry in CSV: {exc}") from None
    P = data[:, :len(coords)]
    v = data[:, -1] if with_values else None
    return P, v


def write_points_csv(P, values=None) -> str:
    """CSV text with 17 significant digits; empty ``value`` cells when ``values`` is None."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    d = P.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i + 1}" for i in range(d)] + ["value"])
    for i, p in enumerate(P):
        cell = "" if values is None else f"{values[i]:.17g}"
        w.writerow([f"{x:.17g}" for x in p] + [cell])
    return buf.getvalue()
