"""Exception types raised across the package."""

from __future__ import annotations


class VnfppError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(VnfppError, ValueError):
    """A caller supplied a parameter outside its valid range."""


class InstanceFormatError(VnfppError):
    """An instance file could not be parsed.

    ``field`` names the offending entry (dotted path) and ``location`` the
    position in the file when it is known.
    """

    def __init__(self, message: str, field: str | None = None, location: str | None = None):
        parts = [message]
        if field:
            parts.append(f"field={field}")
        if location:
            parts.append(f"at {location}")
        super().__init__("; ".join(parts))
        self.field = field
        self.location = location


class UnsupportedVersionError(InstanceFormatError):
    pass


class InstanceValidationError(VnfppError):
    """A parsed instance violates a structural invariant."""


class InfeasibleInstanceError(VnfppError):
    """Not even one instance of every service fits in the data center."""


class InfeasibleSubproblemError(VnfppError):
    """A heuristic ran out of capacity for a subproblem."""


class ConvergenceError(VnfppError):
    """The arrival-rate iteration hit its cap without stabilising."""

    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state
