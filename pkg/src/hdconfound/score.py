"""Decorrelated score debiasing for the exposure coefficient.

Given an initial penalised fit ``eta_hat``, the projection vector ``w``
regresses the exposure on the nuisance columns ``m = (q, u)`` in the metric
weighted by ``b''(eta_hat' z)``. The residual ``d - w'm`` defines the
decorrelated score and the partial information, and a one-step correction
of ``theta_hat`` gives an asymptotically normal estimate.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from ._cd import solve_gram
from ._path import gram_path
from .errors import DegenerateInformationError, InvalidInputError, InvalidStateError
from .glm import Coefficients, Dataset, design_matrix, get_family
from .lasso import CvResult, lambda_grid

INFO_FLOOR = 1e-10
SCORE_MODES = ("at_estimate", "at_null")


def normal_cdf(t: float) -> float:
    t = float(t)
    if math.isnan(t):
        raise InvalidInputError("normal_cdf argument is NaN")
    return float(ndtr(t))


def normal_quantile(q: float) -> float:
    q = float(q)
    if not 0.0 < q < 1.0:
        raise InvalidInputError(f"quantile level must lie in (0, 1), got {q}")
    return float(ndtri(q))


def two_sided_p_value(z: float) -> float:
    return float(2.0 * ndtr(-abs(z)))


@dataclass(frozen=True)
class ProjectionFit:
    w: np.ndarray
    lambda_prime: float
    kkt_residual: float
    n_iter: int = 0


@dataclass(frozen=True)
class InferenceResult:
    theta_tilde: float
    theta_hat: float
    info_partial: float
    se: float
    ci_low: float
    ci_high: float
    alpha: float
    z: float
    p_value: float
    n: int
    k: int = 0
    lam: float = float("nan")
    lambda_prime: float = float("nan")
    n_selected: int = 0

    @property
    def ci_length(self) -> float:
        return self.ci_high - self.ci_low

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "InferenceResult":
        return cls(**d)


def projection_system(family, data: Dataset, uhat, eta_hat) -> tuple[np.ndarray, np.ndarray]:
    """``A = mean(h m m')`` and ``b = mean(h d m)`` with ``h = b''(eta_hat' z)``."""
    family = get_family(family)
    z = design_matrix(data, uhat)
    eta = eta_hat.eta if isinstance(eta_hat, Coefficients) else np.asarray(eta_hat, float)
    h = family.variance(z @ eta)
    m = z[:, 1:]
    hm = m * h[:, None]
    n = data.n
    return hm.T @ m / n, hm.T @ data.d / n


def projection_kkt(a, b, w, lam) -> float:
    grad = a @ w - b
    res = np.where(w != 0, np.abs(grad + lam * np.sign(w)), np.maximum(np.abs(grad) - lam, 0.0))
    return float(res.max()) if res.size else 0.0


def solve_projection(a, b, lambda_prime: float, warm=None, tol: float = 1e-10,
                     max_iter: int = 100000) -> ProjectionFit:
    """Coordinate descent for ``w'Aw/2 - w'b + lambda_prime ||w||_1``."""
    a = np.ascontiguousarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidStateError("projection system has non-finite entries")
    lambda_prime = float(lambda_prime)
    if not lambda_prime >= 0:
        raise InvalidInputError(f"lambda_prime must be non-negative, got {lambda_prime}")
    w = np.zeros(len(b)) if warm is None else np.array(warm, dtype=float)
    grad = a @ w - b
    pen = np.full(len(b), lambda_prime)
    sweeps, _ = solve_gram(a, b, w, grad, pen, tol, max_iter)
    return ProjectionFit(w, lambda_prime, projection_kkt(a, b, w, lambda_prime), sweeps)


def fit_w(family, data: Dataset, uhat, eta_hat, lambda_prime: float) -> ProjectionFit:
    a, b = projection_system(family, data, uhat, eta_hat)
    return solve_projection(a, b, lambda_prime)


def cross_validate_lambda_prime(
    family,
    data: Dataset,
    uhat,
    eta_hat,
    folds: np.ndarray,
    grid_size: int = 100,
    grid_ratio: float = 0.01,
    grid=None,
) -> CvResult:
    """Choose ``lambda_prime`` by the held-out value of the quadratic program.

    Weights ``b''(eta_hat' z)`` come from the full-sample fit; each training
    fold's system is the full system minus the held-out rows.
    """
    family = get_family(family)
    z = design_matrix(data, uhat)
    eta = eta_hat.eta if isinstance(eta_hat, Coefficients) else np.asarray(eta_hat, float)
    h = family.variance(z @ eta)
    m = z[:, 1:]
    hm = m * h[:, None]
    a_sum = hm.T @ m
    b_sum = hm.T @ data.d
    n = data.n
    if grid is None:
        lam_max = float(np.max(np.abs(b_sum / n))) if len(b_sum) else 0.0
        grid = lambda_grid(lam_max, grid_size, grid_ratio)
    grid = np.asarray(grid, dtype=float)
    total = np.zeros(len(grid))
    for f in range(int(folds.max()) + 1):
        test = folds == f
        n_te = int(test.sum())
        a_te = hm[test].T @ m[test]
        b_te = hm[test].T @ data.d[test]
        a_tr = (a_sum - a_te) / (n - n_te)
        b_tr = (b_sum - b_te) / (n - n_te)
        ws = gram_path(a_tr, b_tr, np.ones(len(b_tr)), grid)
        total += 0.5 * np.sum((ws @ a_te) * ws, axis=1) - ws @ b_te
    cv_loss = total / n
    return CvResult(grid, cv_loss, float(grid[int(np.argmin(cv_loss))]), folds)


def debias(
    family,
    data: Dataset,
    uhat,
    eta_hat: Coefficients,
    w_fit: ProjectionFit,
    alpha: float = 0.05,
    score_mode: str = "at_estimate",
    dispersion: float | None = None,
) -> InferenceResult:
    """One-step corrected estimate, Wald interval, p-value and z statistic.

    ``score_mode="at_null"`` evaluates the score with ``theta`` set to zero
    in the linear predictor; ``"at_estimate"`` uses the full ``eta_hat``.
    ``dispersion`` rescales the standard error (linear family only).
    """
    family = get_family(family)
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    if score_mode not in SCORE_MODES:
        raise InvalidInputError(f"score_mode must be one of {SCORE_MODES}, got {score_mode!r}")
    z = design_matrix(data, uhat)
    y = family.check_response(data.y)
    eta = eta_hat.eta
    m = z[:, 1:]
    n = data.n
    resid = data.d - m @ w_fit.w
    lp = z @ eta
    info = float(np.mean(family.variance(lp) * data.d * resid))
    if not info > INFO_FLOOR:
        raise DegenerateInformationError(f"partial information {info:.3e} <= {INFO_FLOOR}")
    score_lp = lp if score_mode == "at_estimate" else m @ eta[1:]
    score = float(-np.mean((y - family.mean(score_lp)) * resid))
    theta_tilde = eta_hat.theta - score / info
    se = 1.0 / math.sqrt(n * info)
    if dispersion is not None:
        se *= math.sqrt(dispersion)
    half = normal_quantile(1.0 - alpha / 2.0) * se
    zstat = theta_tilde / se
    return InferenceResult(
        theta_tilde=theta_tilde,
        theta_hat=eta_hat.theta,
        info_partial=info,
        se=se,
        ci_low=theta_tilde - half,
        ci_high=theta_tilde + half,
        alpha=alpha,
        z=zstat,
        p_value=two_sided_p_value(zstat),
        n=n,
        k=z.shape[1] - data.p,
        lambda_prime=w_fit.lambda_prime,
    )


def residual_variance(data: Dataset, uhat, eta_hat: Coefficients) -> float:
    """``RSS / (n - support size)`` for the linear family."""
    z = design_matrix(data, uhat)
    rss = float(np.sum((data.y - z @ eta_hat.eta) ** 2))
    df = data.n - int(np.count_nonzero(eta_hat.eta))
    return rss / max(df, 1)
