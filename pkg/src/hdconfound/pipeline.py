"""End-to-end inference for one exposure column.

``estimate_surrogates`` runs the factor step on the full covariate matrix;
``infer_coefficient`` fits the penalised GLM with the surrogates as free
covariates, tunes both penalties by cross-validation and debiases.
``full_pipeline`` chains the two.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, replace

import numpy as np

from .errors import HdConfoundError, InvalidInputError, StageError
from .factor import (
    FactorFit,
    estimate_confounders,
    fit_em,
    rotate_canonical,
    select_k_parallel_analysis,
)
from .glm import Dataset, get_family
from .lasso import assign_folds, cross_validate_lambda, fit_lasso_path
from .score import (
    cross_validate_lambda_prime,
    debias,
    fit_w,
    residual_variance,
)


@dataclass(frozen=True)
class PipelineOptions:
    n_folds: int = 10
    grid_size: int = 100
    grid_ratio: float = 0.01
    pa_draws: int = 100
    pa_quantile: float = 0.95
    score_mode: str = "at_estimate"
    intercept: bool = False
    standardize: bool = False
    estimate_dispersion: bool = False


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except (HdConfoundError, ValueError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def stage_seeds(seed: int) -> tuple[int, np.random.SeedSequence]:
    """Integer seed for parallel analysis and a seed sequence for CV folds."""
    pa_seed = int(np.random.SeedSequence([int(seed), 0]).generate_state(1)[0])
    return pa_seed, np.random.SeedSequence([int(seed), 1])


def estimate_surrogates(x, k="auto", seed: int = 0, options: PipelineOptions | None = None):
    """Factor step on the covariate matrix.

    Returns ``(uhat, fit)``; ``fit`` is ``None`` when no factors are retained.
    """
    options = options or PipelineOptions()
    x = np.asarray(x, dtype=float)
    pa_seed, _ = stage_seeds(seed)
    if k == "auto":
        with _stage("select_k"):
            k = select_k_parallel_analysis(x, options.pa_draws, options.pa_quantile, pa_seed)
    k = int(k)
    if k < 0:
        raise StageError("select_k", InvalidInputError(f"k must be non-negative, got {k}"))
    if k == 0:
        return np.zeros((x.shape[0], 0)), None
    with _stage("factor"):
        fit: FactorFit = rotate_canonical(fit_em(x, k))
    with _stage("confounders"):
        uhat = estimate_confounders(fit, x)
    return uhat, fit


def infer_coefficient(
    family,
    y,
    x,
    exposure_index: int,
    uhat,
    alpha: float = 0.05,
    seed: int = 0,
    options: PipelineOptions | None = None,
):
    """Penalised fit, projection and debiasing given surrogate confounders."""
    options = options or PipelineOptions()
    family = get_family(family)
    x = np.asarray(x, dtype=float)
    uhat = np.asarray(uhat, dtype=float).reshape(x.shape[0], -1)
    k = uhat.shape[1]
    with _stage("input"):
        y = family.check_response(y)
        data = Dataset.from_matrix(y, x, exposure_index)
    scale = 1.0
    if options.standardize:
        sd = data.x.std(axis=0)
        sd[sd == 0] = 1.0
        scale = float(sd[0])
        data = Dataset(data.y, data.d / sd[0], data.q / sd[1:], data.u)
    if options.intercept:
        uhat = np.column_stack([uhat, np.ones(data.n)])
    _, fold_seed = stage_seeds(seed)

    with _stage("cv_lambda"):
        cv = cross_validate_lambda(
            family, data, uhat, options.n_folds, options.grid_size, options.grid_ratio,
            seed=fold_seed,
        )
    with _stage("lasso"):
        path = fit_lasso_path(family, data, uhat, cv.lambda_grid, stop_at=cv.lambda_star)
        lasso = path[-1]
    with _stage("cv_lambda_prime"):
        cv_w = cross_validate_lambda_prime(
            family, data, uhat, lasso.coeffs, cv.fold_assignment,
            options.grid_size, options.grid_ratio,
        )
    with _stage("projection"):
        w_fit = fit_w(family, data, uhat, lasso.coeffs, cv_w.lambda_star)
    with _stage("debias"):
        dispersion = None
        if options.estimate_dispersion and family.name == "linear":
            dispersion = residual_variance(data, uhat, lasso.coeffs)
        result = debias(
            family, data, uhat, lasso.coeffs, w_fit, alpha, options.score_mode, dispersion
        )
    result = replace(
        result,
        k=k,
        lam=lasso.lam,
        n_selected=int(np.count_nonzero(lasso.coeffs.gamma)),
    )
    if scale != 1.0:
        result = replace(
            result,
            theta_tilde=result.theta_tilde / scale,
            theta_hat=result.theta_hat / scale,
            se=result.se / scale,
            ci_low=result.ci_low / scale,
            ci_high=result.ci_high / scale,
        )
    return result


def full_pipeline(
    family,
    y,
    x,
    exposure_index: int = 0,
    k="auto",
    alpha: float = 0.05,
    seed: int = 0,
    options: PipelineOptions | None = None,
    uhat=None,
):
    """Select K, fit the factor model, recover confounders, and debias.

    Passing ``uhat`` skips the factor step and uses the given confounders.
    """
    x = np.asarray(x, dtype=float)
    if uhat is None:
        uhat, _ = estimate_surrogates(x, k, seed, options)
    return infer_coefficient(family, y, x, exposure_index, uhat, alpha, seed, options)
