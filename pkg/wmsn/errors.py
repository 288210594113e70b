# wmsn/errors.py
"""Exception types raised by the simulator and its checkers."""

from typing import List, Optional


class WmsnError(Exception):
    pass


class ConfigError(WmsnError):
    """Config file could not be parsed or breaks a model invariant."""


class SolverError(WmsnError):
    """A derived constant or subproblem produced a non-finite value."""


class ViolationError(WmsnError):
    """Base for errors that carry a list of recorded violations."""

    def __init__(self, message: str, violations: Optional[List] = None, slot: Optional[int] = None):
        super().__init__(message)
        self.violations = list(violations or [])
        self.slot = slot


class AvailabilityError(ViolationError):
    """Energy or data availability constraint violated by a decision."""


class BoundViolationError(ViolationError):
    """A queue, energy or dual bound guaranteed by the control rule was exceeded."""
