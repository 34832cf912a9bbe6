"""Exception hierarchy shared across the package."""

from __future__ import annotations

__all__ = ["NamliteError", "ConfigError", "DataError", "TrainingError"]


class NamliteError(Exception):
    """Base class for all errors raised by namlite."""


class ConfigError(NamliteError):
    """Invalid configuration value or combination."""


class DataError(NamliteError):
    """Input data cannot be ingested or is inconsistent with the model."""


class TrainingError(NamliteError):
    """Numerical failure during optimization (divergence, non-finite values)."""
