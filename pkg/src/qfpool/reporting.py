"""Ledger file ingestion and report emission.

Ledgers travel as CSV (``contributor_id,project_id,amount``); full round
reports are written as a human-readable text summary plus machine-readable
``allocations.csv``, ``diagnostics.csv`` and ``round_report.json``.  Every
number is serialized with 17 significant digits so a round trip through text
reproduces the exact float.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .allocation import (
    AllocationResult,
    ContributionLedger,
    QfTargets,
    Regime,
    qf_target,
)
from .errors import LedgerParseError
from .rounds import RoundReport

_HEADER = ("contributor_id", "project_id", "amount")


def fmt17(x: float) -> str:
    """Render a float with 17 significant digits (lossless round trip)."""
    return format(float(x), ".17g")


def funding_shares(funded: np.ndarray) -> np.ndarray:
    """Fraction of the delivered total going to each project (zeros if nothing flows)."""
    funded = np.asarray(funded, dtype=float)
    total = float(funded.sum())
    if total == 0.0:
        return np.zeros_like(funded)
    return funded / total


@dataclass(frozen=True)
class LedgerTable:
    """A parsed ledger file: the matrix plus the ids that label it."""

    ledger: ContributionLedger
    contributor_ids: tuple[str, ...]
    project_ids: tuple[str, ...]


def read_ledger_csv(path: str | Path) -> LedgerTable:
    """Parse a contribution CSV, keeping ids in first-appearance order.

    Duplicate (contributor, project) rows are summed; pairs that never
    appear are zero.  Malformed or negative rows fail with their line
    number.
    """
    path = Path(path)
    contributors: dict[str, int] = {}
    projects: dict[str, int] = {}
    entries: list[tuple[int, int, float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LedgerParseError("empty ledger file", line=1)
        if tuple(h.strip().lower() for h in header) != _HEADER:
            raise LedgerParseError(
                f"expected header {','.join(_HEADER)!r}, got {','.join(header)!r}", line=1
            )
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue  # ignore blank lines
            if len(row) != 3:
                raise LedgerParseError(f"expected 3 fields, got {len(row)}", line=line_no)
            cid, pid, amount_text = (f.strip() for f in row)
            if not cid or not pid:
                raise LedgerParseError("empty contributor or project id", line=line_no)
            try:
                amount = float(amount_text)
            except ValueError:
                raise LedgerParseError(f"amount {amount_text!r} is not a number", line=line_no)
            if not math.isfinite(amount):
                raise LedgerParseError(f"amount {amount_text!r} is not finite", line=line_no)
            if amount < 0:
                raise LedgerParseError(f"amount {amount} is negative", line=line_no)
            i = contributors.setdefault(cid, len(contributors))
            p = projects.setdefault(pid, len(projects))
            entries.append((i, p, amount))
    if not entries:
        raise LedgerParseError("ledger file has no data rows", line=2)
    amounts = np.zeros((len(contributors), len(projects)))
    for i, p, amount in entries:
        amounts[i, p] += amount
    return LedgerTable(
        ledger=ContributionLedger(amounts),
        contributor_ids=tuple(contributors),
        project_ids=tuple(projects),
    )


def load_ledger(path: str | Path) -> ContributionLedger:
    """Parse a contribution CSV into a bare ledger matrix."""
    return read_ledger_csv(path).ledger


def write_ledger_csv(path: str | Path, table: LedgerTable) -> None:
    """Inverse of :func:`read_ledger_csv` (zero entries are omitted)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_HEADER)
        amounts = table.ledger.amounts
        for i, cid in enumerate(table.contributor_ids):
            for p, pid in enumerate(table.project_ids):
                if amounts[i, p] != 0.0:
                    writer.writerow([cid, pid, fmt17(amounts[i, p])])


def write_allocations_csv(
    path: str | Path,
    project_ids: Sequence[str],
    targets: QfTargets,
    allocation: AllocationResult,
) -> None:
    shares = funding_shares(allocation.funded)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["project_id", "qf_target", "funded", "share"])
        for p, pid in enumerate(project_ids):
            writer.writerow(
                [pid, fmt17(targets.per_project[p]), fmt17(allocation.funded[p]), fmt17(shares[p])]
            )


def write_diagnostics_csv(path: str | Path, report: RoundReport) -> None:
    """Per-sweep diagnostics: reallocation cost, smb per project, dispersion."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["sweep", "realloc_cost"]
            + [f"smb_{pid}" for pid in report.project_ids]
            + ["dispersion"]
        )
        for sweep, state in enumerate(report.trajectory.states):
            d = state.diagnostics
            writer.writerow(
                [sweep, fmt17(d.realloc_cost)]
                + [fmt17(v) for v in d.smb]
                + [fmt17(d.smb_dispersion)]
            )


def _json_safe(x):
    if isinstance(x, float):
        return None if not math.isfinite(x) else x
    if isinstance(x, np.floating):
        return _json_safe(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.ndarray):
        return [_json_safe(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    return x


def round_report_dict(report: RoundReport) -> dict:
    """JSON-ready mirror of a round report."""
    d = report.diagnostics
    return _json_safe(
        {
            "round_index": report.round_index,
            "pool_used": report.pool_used,
            "allocation": {
                "funded": report.allocation.funded,
                "regime": report.allocation.regime.value,
                "delivered_total": report.allocation.delivered_total,
                "alpha": report.allocation.alpha,
            },
            "final_ledger": {
                "contributors": list(report.contributor_ids),
                "projects": list(report.project_ids),
                "amounts": report.final_ledger.amounts,
            },
            "diagnostics": {
                "smb": d.smb,
                "weighted_avg_smb": d.weighted_avg_smb,
                "realloc_cost": d.realloc_cost,
                "stationarity_residuals": d.stationarity_residuals,
                "smb_dispersion": d.smb_dispersion,
                "interior": d.interior,
                "excluded_projects": list(d.excluded),
            },
            "contributions_collected": report.contributions_collected,
            "carryover_to_next": report.carryover_to_next,
            "pool_remainder": report.pool_remainder,
            "converged": report.converged,
            "sweeps_used": report.trajectory.sweeps_used,
            "br_failures_total": report.br_failures_total,
        }
    )


def render_report_text(report: RoundReport) -> str:
    """Human-readable summary of one round."""
    targets = qf_target(report.final_ledger)
    shares = funding_shares(report.allocation.funded)
    lines = [
        f"Round {report.round_index + 1}",
        f"  pool: {report.pool_used:.6g}",
        f"  regime: {report.allocation.regime.value}",
        f"  converged: {report.converged} "
        f"(sweeps: {report.trajectory.sweeps_used}, "
        f"solver failures: {report.br_failures_total})",
        "",
        f"  {'project':<16}{'qf_target':>14}{'funded':>14}{'share':>10}",
    ]
    for p, pid in enumerate(report.project_ids):
        lines.append(
            f"  {pid:<16}{targets.per_project[p]:>14.6g}"
            f"{report.allocation.funded[p]:>14.6g}{shares[p]:>10.4f}"
        )
    d = report.diagnostics
    lines += [
        "",
        f"  delivered from pool:      {report.allocation.delivered_total:.6g}",
        f"  undistributed remainder:  {report.pool_remainder:.6g}",
        f"  contributions collected:  {report.contributions_collected:.6g}",
        f"  carryover to next round:  "
        f"{report.carryover_to_next + report.pool_remainder:.6g} "
        f"(contributions {report.carryover_to_next:.6g} + remainder {report.pool_remainder:.6g})",
        "",
        f"  reallocation cost:        {d.realloc_cost:.6g}",
        f"  smb dispersion:           {d.smb_dispersion:.6g}",
        f"  interior ledger:          {d.interior}",
    ]
    if d.excluded:
        excluded_ids = ", ".join(report.project_ids[p] for p in d.excluded)
        lines.append(f"  smb excluded (singular at zero funding): {excluded_ids}")
    return "\n".join(lines) + "\n"


def emit_report(
    reports: RoundReport | Iterable[RoundReport],
    out_dir: str | Path,
    formats: Sequence[str] = ("text", "csv", "json"),
) -> list[Path]:
    """Write report files for one round (flat) or several (one subdir each).

    Returns the list of written paths.  ``formats`` may narrow the outputs
    to any subset of ``text``, ``csv`` and ``json``.
    """
    unknown = set(formats) - {"text", "csv", "json"}
    if unknown:
        raise ValueError(f"unknown report formats: {sorted(unknown)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(reports, RoundReport):
        return _emit_single(reports, out_dir, formats)
    written: list[Path] = []
    reports = list(reports)
    for report in reports:
        sub = out_dir / f"round_{report.round_index + 1:03d}"
        sub.mkdir(parents=True, exist_ok=True)
        written += _emit_single(report, sub, formats)
    if "json" in formats:
        summary = out_dir / "rounds_summary.json"
        with open(summary, "w", encoding="utf-8") as fh:
            json.dump(
                _json_safe(
                    {
                        "n_rounds": len(reports),
                        "pool_used_per_round": [r.pool_used for r in reports],
                        "distributed_per_round": [r.allocation.delivered_total for r in reports],
                        "collected_per_round": [r.contributions_collected for r in reports],
                        "terminal_carryover": (
                            reports[-1].carryover_to_next + reports[-1].pool_remainder
                            if reports
                            else 0.0
                        ),
                        "all_converged": all(r.converged for r in reports),
                    }
                ),
                fh,
                indent=2,
            )
            fh.write("\n")
        written.append(summary)
    return written


def _emit_single(report: RoundReport, out_dir: Path, formats: Sequence[str]) -> list[Path]:
    written: list[Path] = []
    targets = qf_target(report.final_ledger)
    if "csv" in formats:
        alloc_path = out_dir / "allocations.csv"
        write_allocations_csv(alloc_path, report.project_ids, targets, report.allocation)
        diag_path = out_dir / "diagnostics.csv"
        write_diagnostics_csv(diag_path, report)
        written += [alloc_path, diag_path]
    if "json" in formats:
        json_path = out_dir / "round_report.json"
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(round_report_dict(report), fh, indent=2)
            fh.write("\n")
        written.append(json_path)
    if "text" in formats:
        text_path = out_dir / "report.txt"
        text_path.write_text(render_report_text(report), encoding="utf-8")
        written.append(text_path)
    return written
