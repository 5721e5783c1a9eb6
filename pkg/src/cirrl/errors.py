"""Shared exception types.

Every failure mode raised on purpose by this package uses one of these
classes, so callers can distinguish bad inputs from genuine bugs.
"""
from __future__ import annotations


class ConfigError(ValueError):
    """A configuration value is out of range or inconsistent."""


class ShapeError(ValueError):
    """An array argument has the wrong shape or dimension count."""


class NumericError(ArithmeticError):
    """Non-finite values showed up where finite floats are required."""


class ContractError(RuntimeError):
    """A caller broke a documented pre-condition (missing reference
    environment, mixed scales, mismatched sample counts, ...)."""


class DataError(ValueError):
    """A dataset is malformed: unknown labels, ragged rows, bad header."""


class GenerationError(RuntimeError):
    """Synthetic-data generation could not produce a valid draw."""


class PerturbationTooStrongError(GenerationError):
    """Requested test perturbation has no valid distribution (the implied
    covariance is not positive semidefinite)."""


class RankDeficiencyError(RuntimeError):
    """A moment matrix that must be inverted is numerically singular."""


class StepSizeError(RuntimeError):
    """Iterative fitting diverged, almost always a too-large step size."""


class TrainingDivergedError(RuntimeError):
    """A training loss became non-finite."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training loss became non-finite at epoch {epoch}")


class SchemaError(ValueError):
    """A CSV or config file does not match the documented schema."""
