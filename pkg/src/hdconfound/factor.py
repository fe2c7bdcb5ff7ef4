"""Linear factor model ``X = U W + E`` with diagonal noise.

Rows of ``x`` are observations. ``w`` is the ``K x p`` loading matrix,
``sigma_e`` the noise variances, ``s_u`` the confounder covariance.
Maximum likelihood runs EM with ``s_u`` pinned to the identity; the
canonical rotation afterwards whitens ``s_u`` and diagonalises
``W diag(1/sigma_e) W' / p``.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DegenerateDataError, InvalidInputError, NumericalRankError

VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class FactorFit:
    w: np.ndarray
    sigma_e: np.ndarray
    s_u: np.ndarray
    loglik_trace: tuple = field(repr=False)
    converged: bool = True
    n_iter: int = 0

    def __post_init__(self):
        for arr in (self.w, self.sigma_e, self.s_u):
            arr.setflags(write=False)

    @property
    def k(self) -> int:
        return self.w.shape[0]

    @property
    def p(self) -> int:
        return self.w.shape[1]

    def signal_matrix(self) -> np.ndarray:
        """``W diag(1/sigma_e) W' / p``."""
        return (self.w / self.sigma_e) @ self.w.T / self.p

    def implied_cov(self) -> np.ndarray:
        return self.w.T @ self.s_u @ self.w + np.diag(self.sigma_e)


def _check_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise InvalidInputError(f"x must be a 2-d matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("x contains non-finite entries")
    return x


def _objective(s_diag, s, lam, psi):
    """``-(2p)^-1 {log|Sigma| + tr(S Sigma^-1)}`` for ``Sigma = lam lam' + diag(psi)``."""
    p, k = lam.shape
    b = lam / psi[:, None]
    g = np.eye(k) + lam.T @ b
    _, logdet_g = np.linalg.slogdet(g)
    logdet = np.sum(np.log(psi)) + logdet_g
    trace = np.sum(s_diag / psi) - np.trace(np.linalg.solve(g, b.T @ s @ b))
    return -(logdet + trace) / (2 * p)


def fit_em(
    x,
    k: int,
    max_iter: int = 1000,
    tol: float = 1e-8,
    variance_floor: float = VARIANCE_FLOOR,
    seed=None,
) -> FactorFit:
    """Maximum-likelihood factor analysis by EM.

    Starts from the top ``k`` principal components of the sample covariance
    (deterministic, so ``seed`` has no effect) and stops once the relative
    change of the scaled log-likelihood drops below ``tol``.
    """
    x = _check_matrix(x)
    n, p = x.shape
    if n < 2:
        raise InvalidInputError(f"need at least 2 observations, got {n}")
    if not 1 <= k < p:
        raise ConfigError(f"factor count must satisfy 1 <= k < p, got k={k}, p={p}")
    xc = x - x.mean(axis=0)
    s = xc.T @ xc / n
    s_diag = np.diag(s).copy()
    if np.count_nonzero(s_diag > 0) < k:
        raise DegenerateDataError(
            f"only {np.count_nonzero(s_diag > 0)} columns vary; cannot fit {k} factors"
        )

    evals, evecs = np.linalg.eigh(s)
    top = np.argsort(evals)[::-1][:k]
    lam = evecs[:, top] * np.sqrt(np.maximum(evals[top], 0.0))
    psi = np.maximum(s_diag - np.sum(lam**2, axis=1), variance_floor)

    trace = [_objective(s_diag, s, lam, psi)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        b = lam / psi[:, None]
        g = np.eye(k) + lam.T @ b
        beta = np.linalg.solve(g, b.T)  # E[u | x] = beta @ x
        sbt = s @ beta.T
        euu = np.linalg.inv(g) + beta @ sbt
        lam = np.linalg.solve(euu, sbt.T).T
        psi = np.maximum(s_diag - np.sum(lam * sbt, axis=1), variance_floor)
        trace.append(_objective(s_diag, s, lam, psi))
        if abs(trace[-1] - trace[-2]) <= tol * max(abs(trace[-2]), 1e-300):
            converged = True
            break
    return FactorFit(
        w=lam.T.copy(),
        sigma_e=psi,
        s_u=np.eye(k),
        loglik_trace=tuple(trace),
        converged=converged,
        n_iter=it,
    )


def canonical_transform(fit: FactorFit) -> np.ndarray:
    """``T`` such that confounders ``U`` (rows) map to ``U @ T`` under the rotation."""
    return _rotation(fit)[1]


def _rotation(fit: FactorFit):
    k = fit.k
    if k == 0:
        return fit, np.zeros((0, 0))
    chol = np.linalg.cholesky(fit.s_u)
    w1 = chol.T @ fit.w
    m = (w1 / fit.sigma_e) @ w1.T / fit.p
    evals, evecs = np.linalg.eigh((m + m.T) / 2)
    order = np.argsort(evals, kind="stable")[::-1]
    evals, o2 = evals[order], evecs[:, order]
    if k > 1 and np.min(-np.diff(evals)) < 1e-10:
        warnings.warn(
            "repeated eigenvalues in the signal matrix; factor order is not identified",
            RuntimeWarning,
            stacklevel=3,
        )
    w_rot = o2.T @ w1
    lead = np.argmax(np.abs(w_rot), axis=1)
    signs = np.where(w_rot[np.arange(k), lead] < 0, -1.0, 1.0)
    o2 = o2 * signs
    w_rot = w_rot * signs[:, None]
    transform = np.linalg.inv(chol).T @ o2
    rotated = replace(fit, w=w_rot, s_u=np.eye(k), sigma_e=fit.sigma_e.copy())
    return rotated, transform


def rotate_canonical(fit: FactorFit) -> FactorFit:
    """Rotate to ``s_u = I`` with a diagonal, decreasing signal matrix.

    Each factor's sign makes its largest-magnitude loading positive.
    """
    return _rotation(fit)[0]


def estimate_confounders(fit: FactorFit, x) -> np.ndarray:
    """Generalised least squares scores ``(W S^-1 W')^-1 W S^-1 (x_i - xbar)``.

    Returns the ``n x K`` matrix of recovered confounders.
    """
    x = _check_matrix(x)
    if x.shape[1] != fit.p:
        raise InvalidInputError(f"x has {x.shape[1]} columns, fit expects {fit.p}")
    xc = x - x.mean(axis=0)
    if fit.k == 0:
        return np.zeros((x.shape[0], 0))
    ws = fit.w / fit.sigma_e
    gram = ws @ fit.w.T
    if np.linalg.cond(gram) > 1e12:
        raise NumericalRankError("W diag(1/sigma_e) W' is numerically singular")
    return np.linalg.solve(gram, ws @ xc.T).T


def _corr_eigenvalues(x: np.ndarray) -> np.ndarray:
    xc = x - x.mean(axis=0)
    sd = np.sqrt(np.sum(xc**2, axis=0))
    xc = xc[:, sd > 0] / sd[sd > 0]
    return np.linalg.eigvalsh(xc.T @ xc)[::-1]


@functools.lru_cache(maxsize=32)
def null_eigenvalue_quantiles(
    n: int, p: int, n_null_draws: int = 100, quantile: float = 0.95, seed: int = 0
) -> np.ndarray:
    """Per-rank ``quantile`` of correlation eigenvalues of i.i.d. normal ``n x p`` data."""
    rng = np.random.default_rng(seed)
    draws = np.empty((n_null_draws, p))
    for b in range(n_null_draws):
        draws[b] = _corr_eigenvalues(rng.standard_normal((n, p)))
    out = np.quantile(draws, quantile, axis=0)
    out.setflags(write=False)
    return out


def parallel_analysis_table(x, n_null_draws: int = 100, quantile: float = 0.95, seed: int = 0):
    """Observed vs null eigenvalues and the retained factor count.

    Returns ``(k, observed, null)``; ``k`` counts the leading ranks whose
    observed eigenvalue exceeds the null quantile.
    """
    x = _check_matrix(x)
    n, p = x.shape
    if n < 3 or p < 2:
        raise InvalidInputError(f"parallel analysis needs n >= 3 and p >= 2, got {x.shape}")
    if not 0 < quantile < 1:
        raise InvalidInputError(f"quantile must lie in (0, 1), got {quantile}")
    observed = _corr_eigenvalues(x)
    null = null_eigenvalue_quantiles(n, len(observed), int(n_null_draws), float(quantile), int(seed))
    exceeds = observed > null
    k = len(exceeds) if exceeds.all() else int(np.argmin(exceeds))
    return min(k, p - 1), observed, null


def select_k_parallel_analysis(
    x, n_null_draws: int = 100, quantile: float = 0.95, seed: int = 0
) -> int:
    """Horn's parallel analysis for the number of factors."""
    return parallel_analysis_table(x, n_null_draws, quantile, seed)[0]


def mean_canonical_correlation(a, b) -> float:
    """Average canonical correlation between the column spaces of ``a`` and ``b``."""
    a = np.asarray(a, float) - np.mean(a, axis=0)
    b = np.asarray(b, float) - np.mean(b, axis=0)
    qa, _ = np.linalg.qr(a)
    qb, _ = np.linalg.qr(b)
    sv = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return float(np.mean(np.clip(sv, 0.0, 1.0)))
