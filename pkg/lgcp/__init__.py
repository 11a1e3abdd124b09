"""Log-Gaussian Cox process simulation and inference on regular grids."""

from .covariance import CovarianceModel, SeparableSTCovariance, circulant_base, correlation, spectral_check
from .errors import (
    ChainError,
    ConfigError,
    DataFormatError,
    DegenerateRegionError,
    EmbeddingError,
    InsufficientDataError,
    InsufficientSamplesError,
    InvalidInputError,
    LGCPError,
    NumericalError,
    NumericalOverflowError,
    OptimizationError,
)
from .gaussian_field import LatentField, WhitenedField, apply_sqrt_cov, grad_transport, sample_field
from .grid import (
    CellCounts,
    GridSpec,
    PointPattern,
    RegionPartition,
    Window,
    bin_marked_points,
    bin_points,
    bin_spacetime_points,
    build_grid,
    region_mask,
)
from .mc_likelihood import MCTheta, build_plan, mc_loglik, mc_mle, mc_mle_reanchored
from .mcmc import (
    ChainInit,
    PosteriorSamples,
    Priors,
    SamplerConfig,
    diagnostics,
    gibbs_multinomial_step,
    mala_rw_propose,
    mh_accept,
    run_chain,
    run_chains,
    stream_rng,
)
from .models import (
    AggregatedTarget,
    MultitypeModel,
    MultitypeTarget,
    SpaceTimeTarget,
    STModel,
    UnitypeModel,
    UnitypeTarget,
    aggregate_counts,
    cell_loglik,
    cross_covariance_density,
    simulate,
    theoretical_K,
    type_probabilities,
)
from .prediction import (
    Raster,
    aggregated_risk_report,
    exceedance_maps,
    exceedance_probability,
    percentile_surface,
    segregation_sets,
    type_probability_surfaces,
)
from .summary_stats import estimate_K, fit_moments, kernel_intensity, moment_discrepancy

__version__ = "0.1.0"

__all__ = [
    "AggregatedTarget",
    "CellCounts",
    "ChainError",
    "ChainInit",
    "ConfigError",
    "CovarianceModel",
    "DataFormatError",
    "DegenerateRegionError",
    "EmbeddingError",
    "GridSpec",
    "InsufficientDataError",
    "InsufficientSamplesError",
    "InvalidInputError",
    "LGCPError",
    "LatentField",
    "MCTheta",
    "MultitypeModel",
    "MultitypeTarget",
    "NumericalError",
    "NumericalOverflowError",
    "OptimizationError",
    "PointPattern",
    "PosteriorSamples",
    "Priors",
    "Raster",
    "RegionPartition",
    "STModel",
    "SamplerConfig",
    "SeparableSTCovariance",
    "SpaceTimeTarget",
    "UnitypeModel",
    "UnitypeTarget",
    "WhitenedField",
    "Window",
    "aggregate_counts",
    "aggregated_risk_report",
    "apply_sqrt_cov",
    "bin_marked_points",
    "bin_points",
    "bin_spacetime_points",
    "build_grid",
    "build_plan",
    "cell_loglik",
    "circulant_base",
    "correlation",
    "cross_covariance_density",
    "diagnostics",
    "estimate_K",
    "exceedance_maps",
    "exceedance_probability",
    "fit_moments",
    "gibbs_multinomial_step",
    "grad_transport",
    "kernel_intensity",
    "mala_rw_propose",
    "mc_loglik",
    "mc_mle",
    "mc_mle_reanchored",
    "mh_accept",
    "moment_discrepancy",
    "percentile_surface",
    "region_mask",
    "run_chain",
    "run_chains",
    "sample_field",
    "segregation_sets",
    "simulate",
    "spectral_check",
    "stream_rng",
    "theoretical_K",
    "type_probabilities",
    "type_probability_surfaces",
]
