"""First passage time densities and inference for drift diffusion models.

Computes passage densities, non-passage densities and probabilities for
diffusions between two time-varying absorbing boundaries by sequential
quadrature over closed-form single-stage solutions, with space-time
transforms for reducible nonlinear models, Euler-Maruyama validation, and
trial-level likelihood machinery for maximum likelihood and posterior
sampling.
"""

__version__ = "0.1.0"

from .engine import EngineConfig, ScheduleEvaluator, fptd, npp
from .kernels import NonConvergedSeries, SeriesControl
from .model import (
    Boundary,
    BoundaryLabel,
    ContinuousDensity,
    DensityLattice,
    DiscreteMixture,
    InvalidScheduleError,
    MixedInitial,
    NonResponse,
    PointMass,
    Response,
    StageSchedule,
    schedule_from_dict,
    schedule_from_json,
    schedule_to_dict,
    schedule_to_json,
    validate_schedule,
)
from .quadrature import QuadratureRule, gauss_legendre, map_to_interval
from .simulate import FirstPassageSamples, GenericDiffusion, SimConfig, ks_test, simulate_fpt
from .single_stage import (
    CanonicalStageParams,
    fptd_lower_basic,
    fptd_single,
    fptd_single_lower,
    fptd_upper_basic,
    npd_basic,
    npd_single,
)

__all__ = [
    "__version__",
    "Boundary",
    "BoundaryLabel",
    "CanonicalStageParams",
    "ContinuousDensity",
    "DensityLattice",
    "DiscreteMixture",
    "EngineConfig",
    "FirstPassageSamples",
    "GenericDiffusion",
    "InvalidScheduleError",
    "MixedInitial",
    "NonConvergedSeries",
    "NonResponse",
    "PointMass",
    "QuadratureRule",
    "Response",
    "ScheduleEvaluator",
    "SeriesControl",
    "SimConfig",
    "StageSchedule",
    "fptd",
    "fptd_lower_basic",
    "fptd_single",
    "fptd_single_lower",
    "fptd_upper_basic",
    "gauss_legendre",
    "ks_test",
    "map_to_interval",
    "npd_basic",
    "npd_single",
    "npp",
    "schedule_from_dict",
    "schedule_from_json",
    "schedule_to_dict",
    "schedule_to_json",
    "simulate_fpt",
    "validate_schedule",
]
