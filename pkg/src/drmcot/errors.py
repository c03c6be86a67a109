"""Exception hierarchy shared by the solvers and the CLI."""

from __future__ import annotations


class CotError(Exception):
    """Base class for solver-level failures."""


class InfeasibleInstanceError(CotError):
    def __init__(self, message: str, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class DegenerateInstanceError(CotError):
    """A marginal sits on its capacity boundary, so the dual root is at infinity."""


class KernelUnderflowError(CotError):
    """Scalings or kernel entries left the floating-point range."""


class SizeCapError(CotError):
    def __init__(self, message: str, size: int, cap: int):
        super().__init__(message)
        self.size = size
        self.cap = cap


class SolverFailure(CotError):
    """An inner solve failed; ``location`` names the row/column involved."""

    def __init__(self, message: str, location=None):
        super().__init__(message)
        self.location = location
