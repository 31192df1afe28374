"""
mgdfl Session - Per-day operation log.

Each simulated day gets an OperationLog that tracks:
  - one StepRecord per executed step (costs, grid exchange, SOC, the
    forecast used and the trigger indicators)
  - one SolveRecord per robust solve (initial and re-solves) with its
    wall time
  - the feasibility violations found on executed steps, if any
  - steps where buy/sell or ch/dis ran together in the executed powers

Totals are derived from the records, never stored separately.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from mgdfl.metrics import cvar_of
from mgdfl.protocol import (
    OPERATION_COLUMNS, SERIES_COLUMNS, make_step_row, make_timing_row,
)

log = logging.getLogger(__name__)


@dataclass
class StepRecord:
    """What happened at one executed step."""
    t: int
    load_real: float
    load_lower: float
    load_med: float
    load_upper: float
    grid_sch: float
    grid: float
    p_ess: float
    soc: float
    day_ahead: float
    real_time: float
    psi_g: float = 0.0
    psi_c: float = 0.0
    psi: float = 0.0
    chi: int = 0
    emergency: bool = False
    solve_ms: float = 0.0

    @property
    def cost(self) -> float:
        return self.day_ahead + self.real_time


@dataclass
class SolveRecord:
    t: int
    kind: str
    iterations: int
    ok: bool
    solve_ms: float


@dataclass
class OperationLog:
    """Everything recorded while one day is operated under one policy."""
    policy: str
    day: int = 0
    planned_cost: float = 0.0
    steps: list[StepRecord] = field(default_factory=list)
    solves: list[SolveRecord] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)
    simultaneous: list[str] = field(default_factory=list)

    def add_step(self, record: StepRecord) -> None:
        self.steps.append(record)

    def add_solve(self, record: SolveRecord) -> None:
        self.solves.append(record)

    # ------------------------------------------------------------------
    # Totals
    # ------------------------------------------------------------------

    @property
    def step_costs(self) -> np.ndarray:
        return np.array([s.cost for s in self.steps])

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.step_costs))

    @property
    def cvar_step(self) -> float:
        """CVaR at 90% over the per-step costs."""
        return cvar_of(self.step_costs, 0.9) if self.steps else 0.0

    @property
    def resolve_count(self) -> int:
        """Robust solves of the day, the initial one included."""
        return 1 + sum(s.chi for s in self.steps)

    @property
    def failed_solves(self) -> int:
        """Robust solves that returned no schedule."""
        return sum(1 for s in self.solves if not s.ok)

    @property
    def emergency_steps(self) -> list[int]:
        return [s.t for s in self.steps if s.emergency]

    @property
    def total_solve_ms(self) -> float:
        return float(sum(s.solve_ms for s in self.solves))

    @property
    def mean_solve_ms(self) -> float:
        return self.total_solve_ms / len(self.solves) if self.solves else 0.0

    def trigger_steps(self) -> list[int]:
        return [s.t for s in self.steps if s.chi]

    # ------------------------------------------------------------------
    # Serialization
    # ------------------------------------------------------------------

    def rows(self) -> list[dict[str, Any]]:
        """Per-step operation rows (operation.csv keeps OPERATION_COLUMNS)."""
        return [make_step_row(s.t, s.load_real, s.load_med, s.grid, s.soc, s.cost,
                              s.psi_g, s.psi_c, s.chi, s.solve_ms) for s in self.steps]

    def operation_rows(self) -> list[dict[str, Any]]:
        return [{k: row[k] for k in OPERATION_COLUMNS} for row in self.rows()]

    def timing_rows(self) -> list[dict[str, Any]]:
        return [make_timing_row(s.t, s.kind, s.iterations, s.ok, s.solve_ms) for s in self.solves]

    def series_rows(self) -> list[dict[str, Any]]:
        """Plot-ready series: loads, grid exchange, ESS power, SOC and trigger marks."""
        out = []
        for s in self.steps:
            row = asdict(s)
            row["chi"] = int(s.chi)
            row["emergency"] = int(s.emergency)
            out.append({k: row[k] for k in SERIES_COLUMNS})
        return out

    def summary(self) -> dict[str, Any]:
        return {
            "policy": self.policy,
            "day": self.day,
            "cost": self.total_cost,
            "cvar_step": self.cvar_step,
            "planned_cost": self.planned_cost,
            "solves": self.resolve_count,
            "solve_ms": self.total_solve_ms,
            "mean_solve_ms": self.mean_solve_ms,
            "emergency_steps": self.emergency_steps,
            "violations": len(self.violations),
            "failed_solves": self.failed_solves,
            "simultaneous": len(self.simultaneous),
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "summary": self.summary(),
            "steps": [dict(asdict(s), cost=s.cost) for s in self.steps],
            "solves": [asdict(s) for s in self.solves],
            "violations": list(self.violations),
            "simultaneous": list(self.simultaneous),
        }
