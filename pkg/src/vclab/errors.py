"""Exception hierarchy shared across the package."""

from __future__ import annotations


class VclabError(Exception):
    """Base class for all package-specific errors."""


class DesignError(VclabError):
    """Invalid factor structure or observation labels."""


class UnsupportedDesignError(VclabError):
    """The requested decomposition is not defined for this design."""


class DegenerateInputError(VclabError):
    """Input is degenerate (e.g. all variance components zero)."""


class SingularModelError(VclabError):
    """A covariance or coefficient matrix is singular."""


class EnumerationCapError(VclabError):
    """Too many variance components for exhaustive submodel enumeration."""


class ConfigError(VclabError):
    """Invalid or incomplete run configuration."""


class IngestError(VclabError):
    """Malformed input data file."""


class SamplerError(VclabError):
    """The MCMC sampler hit a non-recoverable state.

    ``state`` carries a snapshot of the chain at the point of failure so
    the problem can be reproduced and inspected.
    """

    def __init__(self, message: str, state: dict | None = None):
        super().__init__(message)
        self.state = state or {}


class StepSizeError(SamplerError):
    """A Metropolis step accepted nothing over a full diagnostic window."""


class StatisticUndefinedError(VclabError):
    """A test statistic is degenerate (0/0) on the given data."""
