"""Decoupled diffusion inverse solving on toy PDE problems.

Coefficient-space mixture priors, spectral Poisson/Helmholtz operators and
surrogates, joint-embedding baselines, and numerical checks of the guidance
attenuation and covariance collapse phenomena.
"""

from .errors import (
    DDISError,
    FormatError,
    InvalidArgument,
    ResonanceError,
    StabilityError,
    UndefinedMetric,
    UnsupportedBoundary,
)
from .fields import Boundary, Field, GridSpec, SineCoeffs, make_grid, sine_forward, sine_inverse
from .random_fields import GrfSpec, ObservationSet, POISSON_PRIOR, make_rng, observe, sample_grf, sample_mask
from .operators import OperatorHandle, PairedDataset, Task, fit_spectral_surrogate, solve_helmholtz, solve_poisson
from .mixture import MixtureScoreModel, NoiseSchedule, make_schedule
from .samplers import (
    SamplerConfig,
    SampleResult,
    run_ddis_daps,
    run_decoupled_dps,
    run_dps_joint,
    run_fundaps,
)
from .metrics import radial_power_spectrum, rel_l2, spectral_error
from .config import ExperimentConfig, load_config

__version__ = "0.1.0"

__all__ = [
    "DDISError", "FormatError", "InvalidArgument", "ResonanceError", "StabilityError",
    "UndefinedMetric", "UnsupportedBoundary",
    "Boundary", "Field", "GridSpec", "SineCoeffs", "make_grid", "sine_forward", "sine_inverse",
    "GrfSpec", "ObservationSet", "POISSON_PRIOR", "make_rng", "observe", "sample_grf", "sample_mask",
    "OperatorHandle", "PairedDataset", "Task", "fit_spectral_surrogate", "solve_helmholtz", "solve_poisson",
    "MixtureScoreModel", "NoiseSchedule", "make_schedule",
    "SamplerConfig", "SampleResult", "run_ddis_daps", "run_decoupled_dps", "run_dps_joint", "run_fundaps",
    "radial_power_spectrum", "rel_l2", "spectral_error",
    "ExperimentConfig", "load_config",
]
