"""Command line interface.

Subcommands:
  allocate   one-shot allocation of a pool over a ledger CSV
  simulate   run best-response dynamics for a single round of a scenario
  diagnose   diagnostics for a ledger state under a scenario's preferences
  rounds     run a full multi-round scenario with pool rollover

Exit codes: 0 success, 2 validation error, 3 dynamics did not converge
(reports are still written).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .allocation import (
    ContributionLedger,
    MatchingPool,
    allocate_bhw_cqf,
    allocate_capped,
    qf_target,
)
from .equilibrium import diagnostics
from .errors import QfPoolError
from .reporting import (
    LedgerTable,
    emit_report,
    fmt17,
    funding_shares,
    read_ledger_csv,
    write_allocations_csv,
)
from .rounds import load_scenario, run_round, run_rounds

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NONCONVERGENCE = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qf-pool",
        description="Capital-constrained quadratic funding: allocation and simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_alloc = sub.add_parser("allocate", help="allocate a pool over a ledger CSV")
    p_alloc.add_argument("--ledger", required=True, help="ledger CSV path")
    p_alloc.add_argument("--pool", required=True, type=float, help="matching pool size")
    p_alloc.add_argument(
        "--rule",
        choices=["capped", "bhw-cqf"],
        default="capped",
        help="allocation rule (default: capped)",
    )
    p_alloc.add_argument("--out", help="directory for allocations.csv (optional)")

    p_sim = sub.add_parser("simulate", help="single-round best-response simulation")
    p_sim.add_argument("--scenario", required=True, help="scenario TOML or JSON path")
    p_sim.add_argument("--out", required=True, help="output directory")

    p_diag = sub.add_parser("diagnose", help="one-shot diagnostics for a ledger state")
    p_diag.add_argument("--ledger", required=True, help="ledger CSV path")
    p_diag.add_argument("--pool", required=True, type=float, help="matching pool size")
    p_diag.add_argument("--scenario", required=True, help="scenario providing the preferences")

    p_rounds = sub.add_parser("rounds", help="multi-round scenario with rollover")
    p_rounds.add_argument("--scenario", required=True, help="scenario TOML or JSON path")
    p_rounds.add_argument("--out", required=True, help="output directory")
    return parser


def _align_table(table: LedgerTable, contributor_ids, project_ids) -> ContributionLedger:
    """Rearrange a parsed ledger into the scenario's id order (missing pairs are 0)."""
    unknown_c = set(table.contributor_ids) - set(contributor_ids)
    unknown_p = set(table.project_ids) - set(project_ids)
    if unknown_c or unknown_p:
        extras = sorted(unknown_c | unknown_p)
        raise QfPoolError(f"ledger ids not present in the scenario: {', '.join(extras)}")
    amounts = np.zeros((len(contributor_ids), len(project_ids)))
    c_pos = {cid: k for k, cid in enumerate(contributor_ids)}
    p_pos = {pid: k for k, pid in enumerate(project_ids)}
    for i, cid in enumerate(table.contributor_ids):
        for p, pid in enumerate(table.project_ids):
            amounts[c_pos[cid], p_pos[pid]] = table.ledger.amounts[i, p]
    return ContributionLedger(amounts)


def _cmd_allocate(args) -> int:
    table = read_ledger_csv(args.ledger)
    pool = MatchingPool(args.pool)
    targets = qf_target(table.ledger)
    if args.rule == "capped":
        result = allocate_capped(table.ledger, pool)
    else:
        result = allocate_bhw_cqf(table.ledger, pool)
    shares = funding_shares(result.funded)
    print(f"rule: {args.rule}   pool: {fmt17(pool.amount_d)}   regime: {result.regime.value}")
    if result.alpha is not None:
        print(f"alpha: {fmt17(result.alpha)}")
    print(f"{'project':<16}{'qf_target':>20}{'funded':>20}{'share':>12}")
    for p, pid in enumerate(table.project_ids):
        print(
            f"{pid:<16}{targets.per_project[p]:>20.10g}"
            f"{result.funded[p]:>20.10g}{shares[p]:>12.6f}"
        )
    print(f"delivered from pool: {fmt17(result.delivered_total)}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_allocations_csv(out_dir / "allocations.csv", table.project_ids, targets, result)
        print(f"wrote {out_dir / 'allocations.csv'}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    report = run_round(scenario, 0, scenario.pool_per_round[0])
    emit_report(report, args.out)
    print(f"wrote report files to {args.out}")
    print(
        f"converged: {report.converged}   sweeps: {report.trajectory.sweeps_used}   "
        f"regime: {report.allocation.regime.value}"
    )
    return EXIT_OK if report.converged else EXIT_NONCONVERGENCE


def _cmd_diagnose(args) -> int:
    scenario = load_scenario(args.scenario)
    table = read_ledger_csv(args.ledger)
    ledger = _align_table(table, scenario.contributor_ids, scenario.project_ids)
    record = diagnostics(scenario.utility, ledger, MatchingPool(args.pool))
    print(f"reallocation cost: {fmt17(record.realloc_cost)}")
    print(f"weighted avg smb:  {fmt17(record.weighted_avg_smb)}")
    print(f"smb dispersion:    {fmt17(record.smb_dispersion)}")
    print(f"interior ledger:   {record.interior}")
    print(f"{'project':<16}{'smb':>20}{'stationarity_residual':>24}")
    for p, pid in enumerate(scenario.project_ids):
        if p in record.excluded:
            print(f"{pid:<16}{'excluded':>20}{'excluded':>24}")
        else:
            print(f"{pid:<16}{record.smb[p]:>20.10g}{record.stationarity_residuals[p]:>24.10g}")
    return EXIT_OK


def _cmd_rounds(args) -> int:
    scenario = load_scenario(args.scenario)
    reports = run_rounds(scenario)
    emit_report(reports, args.out)
    print(f"wrote {len(reports)} round reports to {args.out}")
    for report in reports:
        print(
            f"round {report.round_index + 1}: pool {report.pool_used:.6g}, "
            f"distributed {report.allocation.delivered_total:.6g}, "
            f"collected {report.contributions_collected:.6g}, "
            f"converged {report.converged}"
        )
    return EXIT_OK if all(r.converged for r in reports) else EXIT_NONCONVERGENCE


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "allocate": _cmd_allocate,
        "simulate": _cmd_simulate,
        "diagnose": _cmd_diagnose,
        "rounds": _cmd_rounds,
    }
    try:
        return handlers[args.command](args)
    except QfPoolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
