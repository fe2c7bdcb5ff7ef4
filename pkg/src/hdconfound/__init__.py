"""Debiased inference for high-dimensional GLMs with hidden confounders.

The pipeline estimates surrogate confounders from the covariates by factor
analysis, fits an l1-penalised GLM that adjusts for them, and debiases the
exposure coefficient with a decorrelated score to get confidence intervals.
"""

from .errors import (
    ConfigError,
    DegenerateDataError,
    DegenerateInformationError,
    DimensionError,
    HdConfoundError,
    InvalidInputError,
    InvalidStateError,
    NumericalRankError,
    SolverError,
    StageError,
)
from .factor import (
    FactorFit,
    estimate_confounders,
    fit_em,
    mean_canonical_correlation,
    parallel_analysis_table,
    rotate_canonical,
    select_k_parallel_analysis,
)
from .glm import (
    FAMILIES,
    LINEAR,
    LOGISTIC,
    POISSON,
    Coefficients,
    Dataset,
    GlmFamily,
    cumulant_triple,
    design_matrix,
    get_family,
    gradient,
    hessian,
    loss,
)
from .lasso import CvResult, PenalizedFit, cross_validate_lambda, fit_lasso, lambda_max
from .pipeline import PipelineOptions, estimate_surrogates, full_pipeline, infer_coefficient
from .score import (
    InferenceResult,
    ProjectionFit,
    cross_validate_lambda_prime,
    debias,
    fit_w,
    normal_cdf,
    normal_quantile,
)
from .simulation import CoverageSummary, SimConfig, generate_dataset, run_method, run_replications

__version__ = "0.1.0"
