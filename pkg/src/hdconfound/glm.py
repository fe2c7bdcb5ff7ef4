"""Exponential families and the negative log-likelihood calculus.

The response model is canonical-link with unit dispersion, so for a
linear predictor ``t`` each family is fully described by its cumulant
``b(t)`` together with ``b'(t)`` (the mean) and ``b''(t)`` (the variance).

Coefficients are laid out as ``eta = (theta, v, beta)`` against the design
row ``z = (d, q, u)``: exposure first, then nuisance covariates, then the
confounder columns (true or estimated).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, InvalidInputError

POISSON_CLAMP = 30.0


def _softplus(t):
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def _sigmoid(t):
    # exp of a non-positive argument only
    e = np.exp(-np.abs(t))
    return np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _clamp_poisson(t):
    t = np.asarray(t, dtype=float)
    if np.any(t > POISSON_CLAMP):
        warnings.warn(
            f"poisson linear predictor above {POISSON_CLAMP} clamped",
            RuntimeWarning,
            stacklevel=3,
        )
        t = np.minimum(t, POISSON_CLAMP)
    return t


def _poisson_b(t):
    return np.exp(_clamp_poisson(t))


def _linear_valid(y):
    return True


def _logistic_valid(y):
    return bool(np.all((y == 0) | (y == 1)))


def _poisson_valid(y):
    return bool(np.all((y >= 0) & (y == np.floor(y))))


def _linear_dev(y, mu):
    return (y - mu) ** 2


def _logistic_dev(y, mu):
    mu = np.clip(mu, 1e-15, 1 - 1e-15)
    return -2.0 * (y * np.log(mu) + (1 - y) * np.log1p(-mu))


def _poisson_dev(y, mu):
    mu = np.maximum(mu, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        ylog = np.where(y > 0, y * np.log(y / mu), 0.0)
    return 2.0 * (ylog - (y - mu))


@dataclass(frozen=True)
class GlmFamily:
    """Canonical exponential family with ``a(phi) = 1``.

    ``cumulant``, ``mean`` and ``variance`` are vectorised numpy callables
    for ``b``, ``b'`` and ``b''``.
    """

    name: str
    cumulant: Callable[[np.ndarray], np.ndarray]
    mean: Callable[[np.ndarray], np.ndarray]
    variance: Callable[[np.ndarray], np.ndarray]
    _valid: Callable[[np.ndarray], bool]
    _deviance: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def check_response(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise InvalidInputError("response contains non-finite values")
        if not self._valid(y):
            allowed = {"logistic": "{0, 1}", "poisson": "non-negative integers"}
            raise InvalidInputError(
                f"{self.name} response must take values in {allowed[self.name]}"
            )
        return y

    def deviance(self, y, lp) -> np.ndarray:
        """Per-observation deviance at linear predictor ``lp``."""
        return self._deviance(np.asarray(y, dtype=float), self.mean(lp))

    def __repr__(self) -> str:
        return f"GlmFamily({self.name!r})"


LINEAR = GlmFamily(
    "linear",
    cumulant=lambda t: 0.5 * np.square(t),
    mean=lambda t: np.asarray(t, dtype=float) * 1.0,
    variance=lambda t: np.ones_like(np.asarray(t, dtype=float)),
    _valid=_linear_valid,
    _deviance=_linear_dev,
)

LOGISTIC = GlmFamily(
    "logistic",
    cumulant=_softplus,
    mean=_sigmoid,
    variance=lambda t: _sigmoid(t) * _sigmoid(-np.asarray(t, dtype=float)),
    _valid=_logistic_valid,
    _deviance=_logistic_dev,
)

POISSON = GlmFamily(
    "poisson",
    cumulant=_poisson_b,
    mean=_poisson_b,
    variance=_poisson_b,
    _valid=_poisson_valid,
    _deviance=_poisson_dev,
)

FAMILIES = {f.name: f for f in (LINEAR, LOGISTIC, POISSON)}


def get_family(family: str | GlmFamily) -> GlmFamily:
    if isinstance(family, GlmFamily):
        return family
    try:
        return FAMILIES[family]
    except KeyError:
        raise InvalidInputError(
            f"unknown family {family!r}; expected one of {sorted(FAMILIES)}"
        ) from None


def cumulant_triple(family, t: float) -> tuple[float, float, float]:
    """Return ``(b(t), b'(t), b''(t))`` for a scalar ``t``."""
    family = get_family(family)
    t = float(t)
    if not math.isfinite(t):
        raise InvalidInputError(f"t must be finite, got {t}")
    arr = np.array([t])
    return (
        float(family.cumulant(arr)[0]),
        float(family.mean(arr)[0]),
        float(family.variance(arr)[0]),
    )


@dataclass(frozen=True)
class Dataset:
    """Response ``y``, exposure ``d``, nuisance covariates ``q``.

    ``u`` holds the true confounders when the data are simulated.
    """

    y: np.ndarray
    d: np.ndarray
    q: np.ndarray
    u: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.y)
        if self.d.shape != (n,):
            raise DimensionError(f"d must have shape ({n},), got {self.d.shape}")
        if self.q.ndim != 2 or self.q.shape[0] != n:
            raise DimensionError(f"q must have {n} rows, got shape {self.q.shape}")
        if self.u is not None and (self.u.ndim != 2 or self.u.shape[0] != n):
            raise DimensionError(f"u must have {n} rows, got shape {self.u.shape}")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        """Number of observed covariates (exposure included)."""
        return self.q.shape[1] + 1

    @property
    def x(self) -> np.ndarray:
        return np.column_stack([self.d, self.q])

    @classmethod
    def from_matrix(cls, y, x, exposure_index: int = 0, u=None) -> "Dataset":
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] != len(y):
            raise DimensionError("x must be an n x p matrix matching y")
        if not 0 <= exposure_index < x.shape[1]:
            raise InvalidInputError(
                f"exposure_index {exposure_index} outside [0, {x.shape[1]})"
            )
        d = x[:, exposure_index].copy()
        q = np.delete(x, exposure_index, axis=1)
        return cls(np.asarray(y, dtype=float), d, q, u)


@dataclass(frozen=True)
class Coefficients:
    """``eta = (theta, v, beta)``; ``gamma = (theta, v)``, ``zeta = (v, beta)``."""

    theta: float
    v: np.ndarray
    beta: np.ndarray

    @property
    def eta(self) -> np.ndarray:
        return np.concatenate([[self.theta], self.v, self.beta])

    @property
    def gamma(self) -> np.ndarray:
        return np.concatenate([[self.theta], self.v])

    @property
    def zeta(self) -> np.ndarray:
        return np.concatenate([self.v, self.beta])

    @classmethod
    def from_vector(cls, eta, k: int) -> "Coefficients":
        eta = np.asarray(eta, dtype=float)
        split = len(eta) - k
        return cls(float(eta[0]), eta[1:split].copy(), eta[split:].copy())

    @classmethod
    def zeros(cls, p: int, k: int) -> "Coefficients":
        return cls(0.0, np.zeros(p - 1), np.zeros(k))


def design_matrix(data: Dataset, uhat) -> np.ndarray:
    """Stack rows ``z_i = (d_i, q_i, u_i)`` into an ``n x (p + K)`` matrix."""
    uhat = np.zeros((data.n, 0)) if uhat is None else np.asarray(uhat, dtype=float)
    if uhat.ndim != 2 or uhat.shape[0] != data.n:
        raise DimensionError(f"uhat must have {data.n} rows, got shape {uhat.shape}")
    return np.column_stack([data.d, data.q, uhat])


def _prepare(family, data, uhat, coeffs):
    family = get_family(family)
    z = design_matrix(data, uhat)
    eta = coeffs.eta if isinstance(coeffs, Coefficients) else np.asarray(coeffs, float)
    if eta.shape != (z.shape[1],):
        raise DimensionError(
            f"coefficient length {eta.shape[0]} does not match design width {z.shape[1]}"
        )
    y = family.check_response(data.y)
    return family, z, y, eta


def loss(family, data: Dataset, uhat, coeffs) -> float:
    """Average negative log-likelihood ``-mean(y * lp - b(lp))``."""
    family, z, y, eta = _prepare(family, data, uhat, coeffs)
    lp = z @ eta
    return float(-np.mean(y * lp - family.cumulant(lp)))


def gradient(family, data: Dataset, uhat, coeffs) -> np.ndarray:
    family, z, y, eta = _prepare(family, data, uhat, coeffs)
    lp = z @ eta
    return -(z.T @ (y - family.mean(lp))) / len(y)


def hessian(family, data: Dataset, uhat, coeffs) -> np.ndarray:
    family, z, y, eta = _prepare(family, data, uhat, coeffs)
    h = family.variance(z @ eta)
    return (z.T * h) @ z / len(y)
