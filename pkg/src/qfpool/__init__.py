"""Capital-constrained quadratic funding: allocation rules and equilibrium simulation."""

from .allocation import (
    AllocationResult,
    ContributionLedger,
    MatchingPool,
    QfTargets,
    Regime,
    allocate_bhw_cqf,
    allocate_capped,
    qf_target,
    reallocation_cost,
)
from .agent import (
    BestResponseConfig,
    best_response,
    contributor_objective,
    foc_residual,
    objective_gradient,
)
from .equilibrium import (
    DiagnosticsRecord,
    DynamicsConfig,
    SweepOrder,
    Trajectory,
    TrajectoryState,
    diagnostics,
    dispersion_series,
    run_dynamics,
)
from .errors import (
    BestResponseNonConvergence,
    DomainError,
    LedgerParseError,
    QfPoolError,
    ScenarioError,
)
from .preferences import (
    UtilityFamily,
    UtilitySpec,
    social_marginal_benefit,
    utility_marginal,
    utility_value,
)
from .reporting import (
    LedgerTable,
    emit_report,
    funding_shares,
    load_ledger,
    read_ledger_csv,
)
from .rounds import (
    RoundReport,
    ScenarioConfig,
    load_scenario,
    parse_scenario,
    rollover_pool,
    run_round,
    run_rounds,
)

__version__ = "0.1.0"

__all__ = [
    "AllocationResult",
    "BestResponseConfig",
    "BestResponseNonConvergence",
    "ContributionLedger",
    "DiagnosticsRecord",
    "DomainError",
    "DynamicsConfig",
    "LedgerParseError",
    "LedgerTable",
    "MatchingPool",
    "QfPoolError",
    "QfTargets",
    "Regime",
    "RoundReport",
    "ScenarioConfig",
    "ScenarioError",
    "SweepOrder",
    "Trajectory",
    "TrajectoryState",
    "UtilityFamily",
    "UtilitySpec",
    "allocate_bhw_cqf",
    "allocate_capped",
    "best_response",
    "contributor_objective",
    "diagnostics",
    "dispersion_series",
    "emit_report",
    "foc_residual",
    "funding_shares",
    "load_ledger",
    "load_scenario",
    "objective_gradient",
    "parse_scenario",
    "qf_target",
    "read_ledger_csv",
    "reallocation_cost",
    "rollover_pool",
    "run_dynamics",
    "run_round",
    "run_rounds",
    "social_marginal_benefit",
    "utility_marginal",
    "utility_value",
]
