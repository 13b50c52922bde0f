"""Exception types shared across the package."""

from __future__ import annotations


class QfPoolError(Exception):
    """Base class for all package errors."""


class DomainError(QfPoolError, ValueError):
    """An input violates a documented precondition (bad value, wrong regime)."""


class LedgerParseError(QfPoolError, ValueError):
    """A ledger CSV row failed validation. Carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ScenarioError(QfPoolError, ValueError):
    """A scenario config file is malformed or inconsistent."""


class BestResponseNonConvergence(QfPoolError, RuntimeError):
    """A best-response solve hit its iteration cap before certifying KKT.

    Carries the best iterate found so callers can keep going (the dynamics
    loop records the failure instead of crashing).
    """

    def __init__(self, contributor: int, best_iterate, kkt_violation: float, iters: int):
        super().__init__(
            f"best response for contributor {contributor} did not converge in "
            f"{iters} iterations (KKT violation {kkt_violation:.3e})"
        )
        self.contributor = contributor
        self.best_iterate = best_iterate
        self.kkt_violation = kkt_violation
        self.iters = iters
