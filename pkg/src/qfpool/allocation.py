"""Pure allocation rules for a capital-constrained quadratic funding pool.

Quadratic funding assigns each project a target equal to the squared sum of
the square roots of its individual contributions.  When the targets fit in
the matching pool they are paid in full; when they exceed it, this variant
distributes only the pool, pro rata to targets, and retains the individual
contributions inside the mechanism.  A linear-combination rule is provided
as a comparison baseline.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


class Regime(enum.Enum):
    """Which branch of the allocation rule produced a result."""

    UNCONSTRAINED = "unconstrained"
    CAPPED = "capped"


def _as_readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ContributionLedger:
    """Committed amounts, one row per contributor, one column per project."""

    amounts: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.amounts, dtype=float))
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise DomainError("ledger must be a nonempty 2-d matrix")
        bad = ~np.isfinite(a) | (a < 0)
        if bad.any():
            i, p = map(int, np.argwhere(bad)[0])
            raise DomainError(
                f"ledger entry (contributor {i}, project {p}) = {a[i, p]!r} "
                "is negative or non-finite"
            )
        object.__setattr__(self, "amounts", _as_readonly(a))

    @property
    def n_contributors(self) -> int:
        return self.amounts.shape[0]

    @property
    def n_projects(self) -> int:
        return self.amounts.shape[1]

    def total(self) -> float:
        """Sum of every committed amount."""
        return float(self.amounts.sum())

    def with_row(self, i: int, row: np.ndarray) -> "ContributionLedger":
        """New ledger with contributor ``i``'s row replaced."""
        a = self.amounts.copy()
        a[i, :] = row
        return ContributionLedger(a)


@dataclass(frozen=True)
class MatchingPool:
    """Donor-provided budget distributed by the mechanism."""

    amount_d: float

    def __post_init__(self):
        d = float(self.amount_d)
        if not math.isfinite(d) or d < 0:
            raise DomainError(f"pool amount must be finite and >= 0, got {d!r}")
        object.__setattr__(self, "amount_d", d)


@dataclass(frozen=True)
class QfTargets:
    """Per-project quadratic funding targets and their total."""

    per_project: np.ndarray
    total: float

    def __post_init__(self):
        object.__setattr__(self, "per_project", _as_readonly(self.per_project))


@dataclass(frozen=True)
class AllocationResult:
    """Funds promised to each project by one allocation rule.

    ``delivered_total`` is the amount drawn from the matching pool.  For the
    capped-proportional rule that equals the sum of ``funded`` (contributions
    are retained, every delivered unit is pool money); for the baseline rule
    it excludes the contributions passed through to projects.  ``alpha`` is
    populated only by the baseline rule.
    """

    funded: np.ndarray
    regime: Regime
    delivered_total: float
    alpha: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "funded", _as_readonly(self.funded))


def qf_target(ledger: ContributionLedger) -> QfTargets:
    """Quadratic funding target per project: square of the summed square roots."""
    root_sums = np.sqrt(ledger.amounts).sum(axis=0)
    per_project = root_sums * root_sums
    return QfTargets(per_project=per_project, total=float(per_project.sum()))


def allocate_capped(ledger: ContributionLedger, pool: MatchingPool) -> AllocationResult:
    """Distribute the pool: targets in full when they fit, else pro rata.

    Individual contributions are never added to the payout; the mechanism
    keeps them.  A ledger with no contributions at all funds nothing (no
    preference signal exists and the pool must be conserved for rollover),
    reported as a capped result that delivered zero.
    """
    targets = qf_target(ledger)
    d = pool.amount_d
    if targets.total == 0.0 and d > 0.0:
        funded = np.zeros(ledger.n_projects)
        return AllocationResult(funded=funded, regime=Regime.CAPPED, delivered_total=0.0)
    if targets.total <= d:
        return AllocationResult(
            funded=targets.per_project,
            regime=Regime.UNCONSTRAINED,
            delivered_total=targets.total,
        )
    funded = targets.per_project * (d / targets.total)
    return AllocationResult(funded=funded, regime=Regime.CAPPED, delivered_total=float(funded.sum()))


def allocate_bhw_cqf(ledger: ContributionLedger, pool: MatchingPool) -> AllocationResult:
    """Baseline rule: blend of QF targets and raw contributions.

    Each project receives ``alpha * target + (1 - alpha) * contributions``
    with the largest ``alpha`` in [0, 1] whose matching spend (payout minus
    contributions passed through) fits in the pool.  The matching need
    ``target - contributions`` is never negative, so the spend is linear in
    ``alpha`` and the largest feasible value has a closed form.
    """
    targets = qf_target(ledger)
    contributions = ledger.amounts.sum(axis=0)
    matching_need = targets.total - float(contributions.sum())
    d = pool.amount_d
    if matching_need <= d:
        alpha = 1.0
    else:
        alpha = d / matching_need
    if alpha == 1.0:
        funded = targets.per_project
        regime = Regime.UNCONSTRAINED
    else:
        funded = alpha * targets.per_project + (1.0 - alpha) * contributions
        regime = Regime.CAPPED
    delivered = float(funded.sum() - contributions.sum())
    return AllocationResult(funded=funded, regime=regime, delivered_total=delivered, alpha=alpha)


def reallocation_cost(targets: QfTargets, pool: MatchingPool) -> float:
    """Marginal price of steering the pool: total QF targets over pool size."""
    if pool.amount_d == 0.0:
        raise DomainError("undefined reallocation cost: matching pool is empty")
    return targets.total / pool.amount_d
