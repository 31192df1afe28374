"""
mgdfl Benchmark - Multi-day comparison of methods, policies and feeders.

A benchmark is a flat list of DayJob items, one per
(method, policy, feeder, day). Jobs run concurrently on a bounded thread
pool; results come back in job order so the tables do not depend on
scheduling. Tables:

  days            one row per job
  summary         mean/std per method x policy x feeder over all days,
                  plus CVaR90 over the daily costs
  subsets         the same per typical/extreme subset
  timing          wall-clock totals (kept apart from the numeric tables)
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from mgdfl.errors import MgdflError
from mgdfl.metrics import cvar_of
from mgdfl.objects import Microgrid
from mgdfl.online.policies import create_policy
from mgdfl.online.simulator import Forecaster, RtroConfig, run_day
from mgdfl.protocol import SUMMARY_COLUMNS, SUMMARY_KEYS
from mgdfl.tsro import TsroConfig

log = logging.getLogger(__name__)

DAY_COLUMNS = SUMMARY_KEYS + ("day", "label", "cost", "cvar_step", "solves", "emergency",
                              "violations", "failed")
TIMING_COLUMNS = SUMMARY_KEYS + ("days", "solves", "solve_s_total", "solve_s_day",
                                 "solve_ms_per_solve")


@dataclass
class DayJob:
    method: str
    policy: str
    feeder: str
    day: int
    label: str
    mg: Microgrid
    realized: np.ndarray
    forecaster: Forecaster
    seed: int = 0


@dataclass
class DayResult:
    row: dict[str, object]
    solve_ms: float = 0.0
    error: str = ""


def _run_job(job: DayJob, rtro: RtroConfig, tsro: TsroConfig) -> DayResult:
    key = {"method": job.method, "policy": job.policy, "feeder": job.feeder,
           "day": job.day, "label": job.label}
    try:
        oplog = run_day(create_policy(job.policy, rtro), job.mg, job.realized, job.forecaster,
                        rtro=rtro, tsro=tsro, seed=job.seed, day=job.day)
    except MgdflError as exc:
        log.error("Day %d (%s/%s/%s) failed: %s", job.day, job.method, job.policy,
                  job.feeder, exc)
        row = dict(key, cost=np.nan, cvar_step=np.nan, solves=0, emergency=0,
                   violations=0, failed=1)
        return DayResult(row=row, error=str(exc))
    row = dict(key, cost=oplog.total_cost, cvar_step=oplog.cvar_step,
               solves=oplog.resolve_count, emergency=len(oplog.emergency_steps),
               violations=len(oplog.violations), failed=0)
    return DayResult(row=row, solve_ms=oplog.total_solve_ms)


def run_benchmark(jobs: list[DayJob], rtro: RtroConfig | None = None,
                  tsro: TsroConfig | None = None,
                  workers: int = 1) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Run every job; returns (days table, per-day solve times)."""
    rtro = rtro if rtro is not None else RtroConfig()
    tsro = tsro if tsro is not None else TsroConfig()
    log.info("Benchmark: %d day runs on %d worker(s)", len(jobs), workers)
    if workers <= 1:
        results = [_run_job(j, rtro, tsro) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda j: _run_job(j, rtro, tsro), jobs))
    days = pd.DataFrame([r.row for r in results], columns=list(DAY_COLUMNS))
    timing = days[list(SUMMARY_KEYS) + ["day", "solves"]].copy()
    timing["solve_ms"] = [r.solve_ms for r in results]
    failed = int(days["failed"].sum())
    if failed:
        log.warning("Benchmark: %d of %d day runs failed", failed, len(jobs))
    return days, timing


# ----------------------------------------------------------------------
# Tables
# ----------------------------------------------------------------------

def _aggregate(frame: pd.DataFrame) -> dict[str, float]:
    ok = frame[frame["failed"] == 0]
    out: dict[str, float] = {"days": int(len(ok))}
    for c in ("cost", "cvar_step", "solves"):
        values = ok[c].to_numpy(dtype=float)
        out[f"{c}_mean"] = float(values.mean()) if values.size else np.nan
        out[f"{c}_std"] = float(values.std(ddof=0)) if values.size else np.nan
    out["cvar_day"] = cvar_of(ok["cost"].to_numpy(dtype=float), 0.9) if len(ok) else np.nan
    return out


def summarize(days: pd.DataFrame, by=SUMMARY_KEYS) -> pd.DataFrame:
    """Mean/std of day cost, step CVaR and solve count plus CVaR90 over days."""
    rows = []
    for key, group in days.groupby(list(by), sort=True):
        key = key if isinstance(key, tuple) else (key,)
        rows.append(dict(zip(by, key), **_aggregate(group)))
    return pd.DataFrame(rows, columns=list(by) + list(SUMMARY_COLUMNS))


def summarize_subsets(days: pd.DataFrame) -> pd.DataFrame:
    """summarize() per label subset and over all days ("all")."""
    tagged = pd.concat([days, days.assign(label="all")], ignore_index=True)
    return summarize(tagged, by=SUMMARY_KEYS + ("label",))


def timing_table(timing: pd.DataFrame) -> pd.DataFrame:
    rows = []
    for key, group in timing.groupby(list(SUMMARY_KEYS), sort=True):
        solves = int(group["solves"].sum())
        total_s = float(group["solve_ms"].sum()) / 1e3
        rows.append(dict(zip(SUMMARY_KEYS, key), days=len(group), solves=solves,
                         solve_s_total=total_s, solve_s_day=total_s / len(group),
                         solve_ms_per_solve=1e3 * total_s / solves if solves else 0.0))
    return pd.DataFrame(rows, columns=list(TIMING_COLUMNS))
