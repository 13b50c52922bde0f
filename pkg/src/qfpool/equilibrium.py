"""Iterated best-response dynamics and equilibrium diagnostics.

Contributors take turns replacing their row of the ledger with a (damped)
best response until a full sweep no longer moves the ledger.  Each recorded
state carries the allocation and a diagnostics record: the per-project sum
of marginal utilities, its target-share weighted average, the reallocation
cost (target total over pool), and the gap by which each project's social
marginal benefit exceeds the weighted average plus that cost.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .agent import BestResponseConfig, best_response
from .allocation import (
    AllocationResult,
    ContributionLedger,
    MatchingPool,
    allocate_capped,
    qf_target,
)
from .errors import BestResponseNonConvergence, DomainError
from .preferences import UtilityFamily, UtilitySpec, marginal_matrix, utility_marginal


class SweepOrder(enum.Enum):
    GAUSS_SEIDEL = "gauss-seidel"
    JACOBI = "jacobi"

    @classmethod
    def from_str(cls, name: str) -> "SweepOrder":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(s.value for s in cls)
            raise DomainError(f"unknown sweep order {name!r} (expected one of: {valid})")


@dataclass(frozen=True)
class DynamicsConfig:
    """Sweep control for :func:`run_dynamics`.

    ``damping`` mixes each best response with the current row; 0.5 keeps
    Jacobi sweeps from oscillating and is a safe default for Gauss-Seidel
    too.  ``seed`` drives any randomized sweep permutations (kept for
    reproducibility plumbing; the two built-in orders are deterministic).
    """

    sweep_order: SweepOrder = SweepOrder.GAUSS_SEIDEL
    max_sweeps: int = 500
    ledger_tol: float = 1e-9
    damping: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise DomainError("max_sweeps must be >= 1")
        if not self.ledger_tol > 0:
            raise DomainError("ledger_tol must be > 0")
        if not 0.0 < self.damping <= 1.0:
            raise DomainError("damping must be in (0, 1]")


@dataclass(frozen=True)
class DiagnosticsRecord:
    """Equilibrium diagnostics for one ledger state.

    ``smb`` is the social marginal benefit (summed marginal utilities) per
    project; entries for unfunded projects whose valuation family has a
    singular marginal at zero are NaN and listed in ``excluded``.
    ``stationarity_residuals`` measures, per project, how far the smb sits from the
    weighted-average-plus-reallocation-cost level that interior stationarity
    would imply.  ``smb_dispersion`` is max minus min of smb over funded
    projects.  ``interior`` flags ledgers with every entry strictly positive,
    the only states where the aggregated stationarity reading is meaningful.
    """

    smb: np.ndarray
    weighted_avg_smb: float
    realloc_cost: float
    stationarity_residuals: np.ndarray
    smb_dispersion: float
    interior: bool
    excluded: tuple[int, ...] = ()


@dataclass(frozen=True)
class TrajectoryState:
    """One recorded sweep: ledger snapshot, allocation, diagnostics."""

    ledger: ContributionLedger
    allocation: AllocationResult
    diagnostics: DiagnosticsRecord
    br_failures: tuple[int, ...] = ()


@dataclass(frozen=True)
class Trajectory:
    states: list[TrajectoryState]
    converged: bool
    sweeps_used: int

    @property
    def final(self) -> TrajectoryState:
        return self.states[-1]


def diagnostics(spec: UtilitySpec, ledger: ContributionLedger, pool: MatchingPool) -> DiagnosticsRecord:
    """Compute the diagnostics record for one ledger state."""
    if pool.amount_d == 0.0:
        raise DomainError("diagnostics undefined for an empty matching pool")
    if spec.weights.shape != ledger.amounts.shape:
        raise DomainError(
            f"utility weights shape {spec.weights.shape} does not match "
            f"ledger shape {ledger.amounts.shape}"
        )
    targets = qf_target(ledger)
    alloc = allocate_capped(ledger, pool)
    funded = alloc.funded
    realloc = targets.total / pool.amount_d

    n = ledger.n_projects
    singular = spec.family is not UtilityFamily.LOG1P
    cares = (spec.weights > 0).any(axis=0)
    excluded = tuple(
        p for p in range(n) if singular and funded[p] == 0.0 and cares[p]
    )
    smb = np.full(n, np.nan)
    if not excluded:
        smb = marginal_matrix(spec, funded).sum(axis=0)
    else:
        for p in range(n):
            if p in excluded:
                continue
            smb[p] = sum(
                utility_marginal(spec, i, p, float(funded[p]))
                for i in range(ledger.n_contributors)
            )

    share = np.zeros(n)
    if targets.total > 0:
        share = targets.per_project / targets.total
    live = targets.per_project > 0  # always a subset of the non-excluded projects
    weighted_avg = float((share[live] * smb[live]).sum()) if live.any() else 0.0

    residuals = smb - weighted_avg - realloc
    dispersion = float(smb[live].max() - smb[live].min()) if live.any() else 0.0
    return DiagnosticsRecord(
        smb=smb,
        weighted_avg_smb=weighted_avg,
        realloc_cost=realloc,
        stationarity_residuals=residuals,
        smb_dispersion=dispersion,
        interior=bool((ledger.amounts > 0).all()),
        excluded=excluded,
    )


def _record(
    spec: UtilitySpec,
    amounts: np.ndarray,
    pool: MatchingPool,
    failures: tuple[int, ...] = (),
) -> TrajectoryState:
    snapshot = ContributionLedger(amounts)
    return TrajectoryState(
        ledger=snapshot,
        allocation=allocate_capped(snapshot, pool),
        diagnostics=diagnostics(spec, snapshot, pool),
        br_failures=failures,
    )


def run_dynamics(
    spec: UtilitySpec,
    initial: ContributionLedger,
    pool: MatchingPool,
    dyn: DynamicsConfig | None = None,
    br: BestResponseConfig | None = None,
) -> Trajectory:
    """Iterate damped best responses until the ledger stops moving.

    Gauss-Seidel sweeps update rows in index order, each against the freshest
    ledger; Jacobi computes every response against the sweep-start snapshot
    and applies them together.  Convergence is declared on the ledger
    (sup-norm change of a full sweep), not on payoffs, which can plateau
    while allocations still shift.  A best response that fails to certify
    its first-order conditions contributes its best iterate and flags the
    state rather than aborting the run.
    """
    dyn = dyn or DynamicsConfig()
    br = br or BestResponseConfig()
    if spec.weights.shape != initial.amounts.shape:
        raise DomainError(
            f"utility weights shape {spec.weights.shape} does not match "
            f"ledger shape {initial.amounts.shape}"
        )
    amounts = initial.amounts.copy()
    n_contributors = amounts.shape[0]
    states = [_record(spec, amounts, pool)]
    converged = False
    sweeps = 0
    for _ in range(dyn.max_sweeps):
        sweeps += 1
        previous = amounts.copy()
        failures: list[int] = []
        if dyn.sweep_order is SweepOrder.GAUSS_SEIDEL:
            for i in range(n_contributors):
                response = _response_or_best_iterate(spec, amounts, pool, i, br, failures)
                amounts[i] = dyn.damping * response + (1.0 - dyn.damping) * amounts[i]
        else:
            snapshot = amounts.copy()
            responses = [
                _response_or_best_iterate(spec, snapshot, pool, i, br, failures)
                for i in range(n_contributors)
            ]
            for i, response in enumerate(responses):
                amounts[i] = dyn.damping * response + (1.0 - dyn.damping) * amounts[i]
        states.append(_record(spec, amounts, pool, tuple(failures)))
        if np.abs(amounts - previous).max() <= dyn.ledger_tol:
            converged = True
            break
    return Trajectory(states=states, converged=converged, sweeps_used=sweeps)


def _response_or_best_iterate(
    spec: UtilitySpec,
    amounts: np.ndarray,
    pool: MatchingPool,
    i: int,
    br: BestResponseConfig,
    failures: list[int],
) -> np.ndarray:
    try:
        return best_response(spec, ContributionLedger(amounts), pool, i, br)
    except BestResponseNonConvergence as exc:
        failures.append(i)
        return np.asarray(exc.best_iterate, dtype=float)


def dispersion_series(traj: Trajectory) -> np.ndarray:
    """Social-marginal-benefit dispersion at every recorded state, in order."""
    if not traj.states:
        raise DomainError("trajectory has no recorded states")
    return np.array([s.diagnostics.smb_dispersion for s in traj.states])
