"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CollapseLabError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(CollapseLabError):
    """Array length or operator shape does not match the declared space."""


class StateError(CollapseLabError):
    """Invalid state vector: zero norm, non-finite entries, or misuse."""


class GridError(CollapseLabError):
    """A lattice cannot represent the requested object (resolution, leakage,
    unrealizable overlap)."""


class OperatorError(CollapseLabError):
    """Invalid operator specification or assembly input."""


class StabilityError(CollapseLabError):
    """Integration plan violates the explicit-scheme stability guard."""


class NumericalError(CollapseLabError):
    """A numerical routine produced a non-finite or non-convergent result."""


class ConfigError(CollapseLabError):
    """Scenario configuration failed validation.

    Carries the full list of messages so callers can report every problem
    at once instead of the first one hit.
    """

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class PersistError(CollapseLabError):
    """Run persistence conflict or corrupt artifact."""


class AuditRefusal(CollapseLabError):
    """The configuration is outside the class the audit can certify."""
