"""Exception types raised across the package."""

from __future__ import annotations


class HdConfoundError(Exception):
    """Base class for all package errors."""


class InvalidInputError(HdConfoundError, ValueError):
    """Non-finite values, out-of-range arguments, or invalid responses."""


class DimensionError(InvalidInputError):
    """Arrays whose shapes do not line up."""


class ConfigError(InvalidInputError):
    """Invalid configuration (factor count, fold count, simulation config)."""


class DegenerateDataError(HdConfoundError):
    """Data carry too little variation for the requested fit."""


class NumericalRankError(HdConfoundError):
    """A matrix that must be inverted is numerically singular."""


class SolverError(HdConfoundError):
    """An iterative solver diverged."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegenerateInformationError(HdConfoundError):
    """Estimated partial information is too small to build an interval."""


class StageError(HdConfoundError):
    """Wraps a failure inside the inference pipeline with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class InvalidStateError(HdConfoundError):
    """Intermediate quantities are not finite."""
