"""Convergence traces and run reports shared by all solvers."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = ["TRACE_VERSION", "TRACE_COLUMNS", "TraceRow", "SolveResult", "trace_csv", "write_trace", "write_report"]

TRACE_VERSION = 1
TRACE_COLUMNS = ("oracle_calls", "wall_ms", "tau", "lambda", "f", "grad_l2", "grad_linf", "cg_iters", "event")
EVENTS = ("step", "anneal", "exit-grad", "exit-pdgap", "backtrack")


@dataclass
class TraceRow:
    oracle_calls: int
    wall_ms: float
    tau: float
    lam: float
    f: float
    grad_l2: float
    grad_linf: float
    cg_iters: int
    event: str
    # not written to the CSV
    rho: float | None = None
    lambda_before: float | None = None
    lambda_after: float | None = None
    accepted: bool = True
    cg_reason: str | None = None
    cg_residual: float | None = None
    cg_tolerance: float | None = None
    cg_iters_unpreconditioned: int | None = None
    cg_bound: int | None = None
    nonsmooth_dual: float | None = None
    integer_primal: float | None = None
    pd_gap: float | None = None

    def csv_fields(self):
        return [
            str(self.oracle_calls),
            repr(float(self.wall_ms)),
            repr(float(self.tau)),
            repr(float(self.lam)),
            repr(float(self.f)),
            repr(float(self.grad_l2)),
            repr(float(self.grad_linf)),
            str(self.cg_iters),
            self.event,
        ]


@dataclass
class SolveResult:
    delta: np.ndarray
    trace: list
    labeling: np.ndarray
    report: dict
    status: str = "converged"
    extras: dict = field(default_factory=dict)

    def __iter__(self):
        # allows ``delta, trace, labeling, report = solve(...)``
        return iter((self.delta, self.trace, self.labeling, self.report))


def trace_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for row in rows:
        w.writerow(row.csv_fields())
    return buf.getvalue()


def write_trace(rows, path):
    with open(path, "w", newline="") as fh:
        fh.write(trace_csv(rows))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_report(report, path):
    with open(path, "w") as fh:
        json.dump(_plain(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
