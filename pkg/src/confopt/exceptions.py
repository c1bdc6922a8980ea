"""Shared exception types.

Grouped here so the CLI can map error families onto stable exit codes:
configuration problems, infeasible or unbounded problem setups, and
numeric failures each exit differently.
"""

from __future__ import annotations


class ConfigError(ValueError):
    """Bad or inconsistent run configuration."""


class UnboundedRegionError(RuntimeError):
    """The calibrated region is the whole space (infinite threshold)."""


class InfeasibleError(RuntimeError):
    """The feasible set of the decision problem is empty."""


class ProjectionError(RuntimeError):
    """A projection routine failed to converge to tolerance."""


class AbcBudgetError(RuntimeError):
    """ABC rejection ran out of simulation budget before accepting enough draws."""

    def __init__(self, message, n_accepted=0, n_requested=0, n_simulations=0, tolerance=None):
        super().__init__(message)
        self.n_accepted = n_accepted
        self.n_requested = n_requested
        self.n_simulations = n_simulations
        self.tolerance = tolerance


class GraphFormatError(ValueError):
    """Malformed road-network file."""

    def __init__(self, message, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
