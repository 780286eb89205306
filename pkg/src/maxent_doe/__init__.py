"""Maximum-entropy adaptive design of experiments.

HOLMES metamodels (:mod:`maxent_doe.holmes`) with KDE-based nodal spacing
(:mod:`maxent_doe.kde`) drive an objective ``S = Q_L Q_S Q_E`` that proposes
batches of new samples (:mod:`maxent_doe.doe`).  :mod:`maxent_doe.timedep`
extends the loop to time-dependent responses and :mod:`maxent_doe.testbed`
holds the analytic benchmarks.
"""

from .doe import DoeConfig, build_objective, propose, propose_batch, run_doe
from .errors import (BoundaryProximityError, ConditioningError, ConfigurationError, ConvergenceError,
                     DataError, DegenerateGeometryError, DomainError, MaxentDoeError, ParameterError,
                     QuadratureError, RankError, StateError)
from .geometry import Domain, Grid, NodeSet, make_grid
from .holmes import HolmesConfig, MetaModel, gamma_for_norm
from .kde import KdeConfig, nodal_spacing
from .timedep import ProjectionMethod, WaveProblem, run_timedep_doe

__version__ = "0.1.0"

__all__ = [
    "BoundaryProximityError",
    "ConditioningError",
    "ConfigurationError",
    "ConvergenceError",
    "DataError",
    "DegenerateGeometryError",
    "DoeConfig",
    "Domain",
    "DomainError",
    "Grid",
    "HolmesConfig",
    "KdeConfig",
    "MaxentDoeError",
    "MetaModel",
    "NodeSet",
    "ParameterError",
    "ProjectionMethod",
    "QuadratureError",
    "RankError",
    "StateError",
    "WaveProblem",
    "build_objective",
    "gamma_for_norm",
    "make_grid",
    "nodal_spacing",
    "propose",
    "propose_batch",
    "run_doe",
    "run_timedep_doe",
]
