"""Multi-round orchestration: scenario configs, round runs, pool rollover.

Contributions are retained by the mechanism, so money committed in one round
does not persist as a live commitment; it joins the next round's matching
pool together with whatever part of the pool went undistributed.  Each round
restarts the dynamics from the scenario's configured initial ledger.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agent import BestResponseConfig
from .allocation import AllocationResult, ContributionLedger, MatchingPool
from .equilibrium import (
    DiagnosticsRecord,
    DynamicsConfig,
    SweepOrder,
    Trajectory,
    run_dynamics,
)
from .errors import DomainError, ScenarioError
from .preferences import UtilityFamily, UtilitySpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to run one or more funding rounds."""

    project_ids: tuple[str, ...]
    contributor_ids: tuple[str, ...]
    utility: UtilitySpec
    initial_ledger: ContributionLedger
    pool_per_round: tuple[float, ...]
    n_rounds: int
    dynamics: DynamicsConfig
    best_response: BestResponseConfig

    def __post_init__(self):
        if self.n_rounds < 1:
            raise ScenarioError("n_rounds must be >= 1")
        if len(self.pool_per_round) != self.n_rounds:
            raise ScenarioError(
                f"pool_per_round has {len(self.pool_per_round)} entries "
                f"but n_rounds is {self.n_rounds}"
            )
        if any(d < 0 for d in self.pool_per_round):
            raise ScenarioError("pool_per_round entries must be >= 0")
        if len(set(self.project_ids)) != len(self.project_ids) or not self.project_ids:
            raise ScenarioError("project ids must be nonempty and unique")
        if len(set(self.contributor_ids)) != len(self.contributor_ids) or not self.contributor_ids:
            raise ScenarioError("contributor ids must be nonempty and unique")
        shape = (len(self.contributor_ids), len(self.project_ids))
        if self.utility.weights.shape != shape:
            raise ScenarioError(
                f"utility weights shape {self.utility.weights.shape} does not match "
                f"(contributors, projects) = {shape}"
            )
        if self.initial_ledger.amounts.shape != shape:
            raise ScenarioError(
                f"initial ledger shape {self.initial_ledger.amounts.shape} does not "
                f"match (contributors, projects) = {shape}"
            )


@dataclass(frozen=True)
class RoundReport:
    """Outcome of one funding round.

    ``carryover_to_next`` equals ``contributions_collected`` (the mechanism
    retains every contribution); the undistributed ``pool_remainder`` is
    reported separately and also rolls forward.
    """

    round_index: int
    pool_used: float
    allocation: AllocationResult
    final_ledger: ContributionLedger
    diagnostics: DiagnosticsRecord
    contributions_collected: float
    carryover_to_next: float
    pool_remainder: float
    converged: bool
    trajectory: Trajectory
    project_ids: tuple[str, ...]
    contributor_ids: tuple[str, ...]

    @property
    def br_failures_total(self) -> int:
        return sum(len(s.br_failures) for s in self.trajectory.states)


def run_round(scenario: ScenarioConfig, round_index: int, incoming_pool: float) -> RoundReport:
    """Run one round's dynamics and allocate the pool at the converged ledger."""
    if incoming_pool < 0:
        raise DomainError("incoming pool must be >= 0")
    pool = MatchingPool(incoming_pool)
    trajectory = run_dynamics(
        scenario.utility,
        scenario.initial_ledger,
        pool,
        scenario.dynamics,
        scenario.best_response,
    )
    final = trajectory.final
    collected = final.ledger.total()
    # delivered can overshoot the pool by float rounding in the capped branch
    remainder = max(incoming_pool - final.allocation.delivered_total, 0.0)
    return RoundReport(
        round_index=round_index,
        pool_used=incoming_pool,
        allocation=final.allocation,
        final_ledger=final.ledger,
        diagnostics=final.diagnostics,
        contributions_collected=collected,
        carryover_to_next=collected,
        pool_remainder=remainder,
        converged=trajectory.converged,
        trajectory=trajectory,
        project_ids=scenario.project_ids,
        contributor_ids=scenario.contributor_ids,
    )


def rollover_pool(prev: RoundReport, next_external: float) -> float:
    """Next round's pool: fresh donations plus retained contributions plus remainder."""
    if next_external < 0:
        raise DomainError("external donation must be >= 0")
    return next_external + prev.contributions_collected + prev.pool_remainder


def run_rounds(scenario: ScenarioConfig) -> list[RoundReport]:
    """Run every configured round, rolling collected money into each next pool."""
    reports: list[RoundReport] = []
    pool = scenario.pool_per_round[0]
    for k in range(scenario.n_rounds):
        if k > 0:
            pool = rollover_pool(reports[-1], scenario.pool_per_round[k])
        reports.append(run_round(scenario, k, pool))
    return reports


# --- scenario file ingestion ------------------------------------------------

def parse_scenario(raw: dict, source: str = "<scenario>") -> ScenarioConfig:
    """Build a ScenarioConfig from a parsed TOML/JSON document."""

    def require(key: str):
        if key not in raw:
            raise ScenarioError(f"{source}: missing required key {key!r}")
        return raw[key]

    projects = tuple(str(p) for p in require("projects"))
    contributors = tuple(str(c) for c in require("contributors"))
    n_rounds = int(raw.get("n_rounds", 1))
    pools = raw.get("pool_per_round")
    if pools is None:
        raise ScenarioError(f"{source}: missing required key 'pool_per_round'")
    pool_per_round = tuple(float(d) for d in pools)

    util = require("utility")
    if "family" not in util or "weights" not in util:
        raise ScenarioError(f"{source}: [utility] needs 'family' and 'weights'")
    exponent = util.get("exponent")
    try:
        spec = UtilitySpec(
            family=UtilityFamily.from_str(str(util["family"])),
            weights=np.asarray(util["weights"], dtype=float),
            exponent=None if exponent is None else float(exponent),
        )
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{source}: invalid utility spec: {exc}") from exc

    shape = (len(contributors), len(projects))
    initial = raw.get("initial_ledger")
    try:
        ledger = ContributionLedger(
            np.zeros(shape) if initial is None else np.asarray(initial, dtype=float)
        )
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{source}: invalid initial ledger: {exc}") from exc

    dyn_raw = dict(raw.get("dynamics", {}))
    if "sweep_order" in dyn_raw:
        dyn_raw["sweep_order"] = SweepOrder.from_str(str(dyn_raw["sweep_order"]))
    br_raw = dict(raw.get("best_response", {}))
    try:
        dynamics = DynamicsConfig(**dyn_raw)
        best_response_cfg = BestResponseConfig(**br_raw)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{source}: invalid solver config: {exc}") from exc

    return ScenarioConfig(
        project_ids=projects,
        contributor_ids=contributors,
        utility=spec,
        initial_ledger=ledger,
        pool_per_round=pool_per_round,
        n_rounds=n_rounds,
        dynamics=dynamics,
        best_response=best_response_cfg,
    )


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Read a scenario from a TOML (canonical) or JSON file."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    if path.suffix.lower() == ".json":
        raw = json.loads(path.read_text(encoding="utf-8"))
    else:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: scenario document must be a table/object")
    return parse_scenario(raw, source=str(path))
