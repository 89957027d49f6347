"""Computational laboratory for the discrete 2D Gaussian free field.

Builds the zero-boundary Gaussian field on dyadic boxes through its
exact Green-function covariance, cuts it along dyadic lines into
independent sub-box fields, and measures the extreme-value quantities
(per-level mean maxima, paired gaps, centered-maximum quantile spreads)
that connect its maximum to branching-random-walk behavior.
"""

from .brw import (BrwRun, BrwSimStats, BrwSpec, BudgetError, CdfGrid,
                  GridCoverageError, brw_cdf_step, brw_run, brw_simulate)
from .extremes import (GROWTH_C, LEVEL1_GAP, LEVEL1_MEAN, GrowthFit, MaxStats,
                       ResumeMismatchError, field_max, growth_fit,
                       mc_max_stats, monotonicity_report, stats_from_maxima,
                       subsequence_detector, tightness_diagnostic)
from .green import (DEFAULT_DENSE_CAP, BoundaryDataError, DenseSizeError,
                    GreenOperator, RegionShapeError, green_dense,
                    green_spectral, harmonic_extension, variance_profile)
from .hierarchy import (Decomposition, DyadicSet, condition_on_level,
                        decompose, dyadic_set, exact_conditional_covariance,
                        markov_block_check, residual_subfields)
from .lattice import BoxSpec, Field, Site
from .sampling import SeedSpec, batch_sample, sample_dense, sample_spectral

__version__ = "0.1.0"

__all__ = [
    "BoxSpec", "Field", "Site", "SeedSpec",
    "GreenOperator", "green_dense", "green_spectral", "harmonic_extension",
    "variance_profile", "DenseSizeError", "RegionShapeError",
    "BoundaryDataError", "DEFAULT_DENSE_CAP",
    "sample_dense", "sample_spectral", "batch_sample",
    "DyadicSet", "dyadic_set", "condition_on_level", "residual_subfields",
    "exact_conditional_covariance", "markov_block_check", "decompose",
    "Decomposition",
    "MaxStats", "GrowthFit", "field_max", "mc_max_stats",
    "stats_from_maxima", "monotonicity_report", "subsequence_detector",
    "growth_fit", "tightness_diagnostic", "ResumeMismatchError",
    "GROWTH_C", "LEVEL1_MEAN", "LEVEL1_GAP",
    "CdfGrid", "BrwSpec", "BrwRun", "BrwSimStats", "brw_cdf_step", "brw_run",
    "brw_simulate", "GridCoverageError", "BudgetError",
    "__version__",
]
