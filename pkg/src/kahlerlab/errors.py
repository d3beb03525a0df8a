"""Exception types shared by all modules."""

from __future__ import annotations


class KahlerLabError(Exception):
    """Base class for every error raised by the package."""


class ContractError(KahlerLabError, ValueError):
    """An input violates a documented precondition."""


class PositivityError(KahlerLabError):
    """A form that must be positive definite is not."""

    def __init__(self, message: str, indices=None):
        super().__init__(message)
        self.indices = indices


class ConeExitError(PositivityError):
    """An iterate or flow state left the positive cone and could not recover."""


class NormalizationError(KahlerLabError):
    """Total masses that must agree do not."""


class NonConvergenceError(KahlerLabError):
    """An iterative solver stopped without meeting its tolerance.

    ``report`` carries whatever telemetry the solver had collected.
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report
