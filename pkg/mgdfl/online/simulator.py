"""
mgdfl Simulator - Receding-horizon operation of one day.

The day is played out step by step:

  t = 0   forecast the whole day, solve the robust dispatch, commit it
  t >= 1  refresh the forecast for [t, T) from the realized history,
          evaluate the committed schedule against it, compute the trigger
          indicators and let the policy decide whether to re-solve
  every t settle the realized load with a one-step recourse LP holding
          the committed first stage, then advance the SOC

Schedule evaluation is a single deterministic recourse LP under the
forecast median. The reference values (grid_sch, J_sch) come from the
same LP under the median the schedule was built from, starting from the
scheduled SOC; the updated values start from the actual SOC.
"""

from __future__ import annotations

import logging
import math
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
import pandas as pd

from mgdfl.errors import (
    ConfigError, DimensionError, InfeasibleError, NumericalError, RecourseInfeasibleError,
)
from mgdfl.forecast import FeatureWindow, PredictionInterval, QuantileNet, predict, to_interval
from mgdfl.model import (
    check_feasibility, day_ahead_cost, detect_simultaneity, real_time_cost, realized_powers,
)
from mgdfl.objects import (
    KEYS, FirstStageSchedule, LoadTrajectory, Microgrid, RecoursePlan, UncertaintySet, as_vector,
)
from mgdfl.online.policy import DispatchPolicy, TriggerInputs
from mgdfl.online.session import OperationLog, SolveRecord, StepRecord
from mgdfl.online.world import DayState
from mgdfl.tsro import RecourseProgram, TsroConfig, TsroSolution

log = logging.getLogger(__name__)


@dataclass
class RtroConfig:
    """Trigger thresholds and re-solve windows (steps)."""
    eps_g: float = 1e-3
    eps_c: float = 0.05
    dtau_min: float = 1
    dtau_max: float = 8
    eps_div: float = 1e-6

    def __post_init__(self):
        for name in ("eps_g", "eps_c", "eps_div"):
            v = getattr(self, name)
            if not v > 0:
                raise ConfigError(f"rtro.{name} must be > 0, got {v!r}")
        if not 1 <= self.dtau_min <= self.dtau_max:
            raise ConfigError(f"rtro requires 1 <= dtau_min <= dtau_max, got "
                              f"{self.dtau_min!r}, {self.dtau_max!r}")


# ----------------------------------------------------------------------
# Indicators
# ----------------------------------------------------------------------

def grid_indicator(grid_upd: float, grid_sch: float, p_pcc_max: float) -> float:
    """Grid-side mismatch normalized by the PCC limit."""
    return abs(grid_upd - grid_sch) / p_pcc_max


def cost_indicator(j_upd: float, j_sch: float, eps_div: float = 1e-6) -> float:
    """Relative change of the remaining-horizon cost estimate."""
    return abs(j_upd - j_sch) / (abs(j_sch) + eps_div)


def _ratio(value: float, threshold: float) -> float:
    # an infinite threshold disables its indicator
    return 0.0 if math.isinf(threshold) else value / threshold


def combined_indicator(psi_g: float, psi_c: float, cfg: RtroConfig) -> float:
    return max(_ratio(psi_g, cfg.eps_g), _ratio(psi_c, cfg.eps_c))


def trigger(psi_g: float, psi_c: float, dtau: float, cfg: RtroConfig) -> int:
    """1 when the remaining horizon should be re-solved at this step."""
    psi = combined_indicator(psi_g, psi_c, cfg)
    return int((psi > 1.0 and dtau >= cfg.dtau_min) or dtau >= cfg.dtau_max)


# ----------------------------------------------------------------------
# Schedule evaluation
# ----------------------------------------------------------------------

@dataclass
class ScheduleEvaluation:
    grid: np.ndarray
    cost: float
    plan: RecoursePlan


def evaluate_schedule(x: FirstStageSchedule, mg: Microgrid, median) -> ScheduleEvaluation:
    """Fix x over the remaining horizon and settle it against `median`.

    Returns the implied net grid exchange per step and the remaining-horizon
    cost (day-ahead cost of x plus the recourse cost). Raises
    RecourseInfeasibleError when the median cannot be served.
    """
    if mg.horizon < 1:
        raise DimensionError("schedule evaluation needs a nonempty horizon")
    prog = RecourseProgram(x, mg)
    kkt = prog.solve(median)
    plan = prog.plan(kkt)
    p = realized_powers(x, plan)
    _, da = day_ahead_cost(x, mg.prices, mg.config.dt_hours)
    return ScheduleEvaluation(grid=p["buy"] - p["sell"], cost=da + kkt.objective, plan=plan)


def indicators(state: DayState, median, cfg: RtroConfig) -> TriggerInputs:
    """Trigger inputs at the current step of `state`."""
    t = state.t
    x = state.remaining_schedule()
    try:
        sch = evaluate_schedule(x, state.remaining_microgrid(actual=False),
                                state.remaining_reference())
        upd = evaluate_schedule(x, state.remaining_microgrid(actual=True), median)
    except RecourseInfeasibleError as exc:
        log.info("t=%d: schedule evaluation infeasible, forcing a trigger (%s)", t, exc)
        psi_g = psi_c = math.inf
    else:
        psi_g = grid_indicator(upd.grid[0], sch.grid[0], state.mg.config.p_pcc_max)
        psi_c = cost_indicator(upd.cost, sch.cost, cfg.eps_div)
    dtau = t - state.t_last
    return TriggerInputs(t=t, dtau=dtau, psi_g=psi_g, psi_c=psi_c,
                         psi=combined_indicator(psi_g, psi_c, cfg),
                         chi=trigger(psi_g, psi_c, dtau, cfg))


# ----------------------------------------------------------------------
# Forecasters
# ----------------------------------------------------------------------

class Forecaster(ABC):
    """Source of the remaining-horizon prediction interval."""

    @abstractmethod
    def interval(self, t: int, observed: np.ndarray) -> PredictionInterval:
        """Interval over [t, T) given the load realized over [0, t)."""


class FixedForecaster(Forecaster):
    """One day-ahead interval, sliced as the day advances."""

    def __init__(self, day: PredictionInterval):
        self.day = day

    def interval(self, t: int, observed: np.ndarray) -> PredictionInterval:
        d = self.day
        return PredictionInterval(d.lower[t:], d.median[t:], d.upper[t:], d.kappa)


class ModelForecaster(Forecaster):
    """Trained quantile model conditioned on the realized history up to t."""

    def __init__(self, model: QuantileNet, history, timestamps: pd.DatetimeIndex,
                 kappa: float = 0.9):
        self.model = model
        self.history = as_vector(history, "history")
        if self.history.shape[0] < model.n_lags:
            raise DimensionError(f"history has {self.history.shape[0]} steps, "
                                 f"model needs {model.n_lags} lags")
        self.timestamps = pd.DatetimeIndex(timestamps)
        if len(self.timestamps) > model.horizon:
            raise DimensionError(f"day of {len(self.timestamps)} steps exceeds the model "
                                 f"horizon {model.horizon}")
        self.kappa = kappa

    def interval(self, t: int, observed: np.ndarray) -> PredictionInterval:
        observed = np.asarray(observed, dtype=float)[:t]
        lags = np.concatenate([self.history, observed])[-self.model.n_lags:]
        ts = self.timestamps[t]
        window = FeatureWindow(lags=lags, hour=ts.hour + ts.minute / 60.0, dow=ts.dayofweek)
        q = predict(self.model, window).window(0, len(self.timestamps) - t)
        pi = to_interval(q, self.kappa)
        return PredictionInterval(np.maximum(pi.lower, 0.0), np.maximum(pi.median, 0.0),
                                  np.maximum(pi.upper, 0.0), pi.kappa)


# ----------------------------------------------------------------------
# Day loop
# ----------------------------------------------------------------------

def _timed_solve(tsro: TsroConfig, uset: UncertaintySet, mg: Microgrid,
                 seed: int) -> tuple[TsroSolution | None, float, Exception | None]:
    started = time.perf_counter()
    try:
        sol, err = tsro.solve(uset, mg, seed=seed), None
    except (InfeasibleError, NumericalError) as exc:
        sol, err = None, exc
    return sol, (time.perf_counter() - started) * 1e3, err


def _initial_solve(state: DayState, pi: PredictionInterval, tsro: TsroConfig, seed: int,
                   oplog: OperationLog) -> float:
    mg = state.remaining_microgrid()
    sol, ms, err = _timed_solve(tsro, pi.uncertainty_set(), mg, seed)
    oplog.add_solve(SolveRecord(0, "initial", sol.iterations if sol else 0, sol is not None, ms))
    total = ms
    if sol is None:
        log.warning("Initial robust solve failed (%s); retrying at the forecast median", err)
        sol, ms, err = _timed_solve(tsro, UncertaintySet.degenerate(pi.median), mg, seed)
        oplog.add_solve(SolveRecord(0, "fallback", sol.iterations if sol else 0,
                                    sol is not None, ms))
        total += ms
        if sol is None:
            raise err
    state.commit(sol.x, pi.median)
    oplog.planned_cost = sol.day_ahead_cost
    return total


def _resolve(state: DayState, pi: PredictionInterval, tsro: TsroConfig, seed: int,
             oplog: OperationLog) -> tuple[float, bool]:
    """(wall time, whether a new schedule was committed)."""
    t = state.t
    sol, ms, err = _timed_solve(tsro, pi.uncertainty_set(), state.remaining_microgrid(), seed)
    oplog.add_solve(SolveRecord(t, "resolve", sol.iterations if sol else 0, sol is not None, ms))
    if sol is None:
        log.warning("t=%d: re-solve failed (%s); keeping the committed schedule", t, err)
        return ms, False
    state.commit(sol.x, pi.median)
    return ms, True


def _settle(state: DayState, load_t: float) -> tuple[FirstStageSchedule, Microgrid,
                                                      RecoursePlan, bool]:
    """One-step recourse for the realized load; emergency settlement if needed."""
    t = state.t
    x = state.step_schedule()
    mg = state.mg.window(t, t + 1, e_init=state.soc)
    try:
        prog = RecourseProgram(x, mg)
        return x, mg, prog.plan(prog.solve([load_t])), False
    except RecourseInfeasibleError as exc:
        log.warning("t=%d: %s; settling with emergency DLC and curtailment", t, exc)
    try:
        prog = RecourseProgram(x, mg, emergency=True)
        return x, mg, prog.plan(prog.solve([load_t])), True
    except RecourseInfeasibleError as exc:
        diag = exc.diagnostic
        if diag is not None:
            diag.step = t
        detail = diag.describe() if diag is not None else "no feasible recourse"
        raise RecourseInfeasibleError(
            diag, f"unrecoverable infeasibility at step {t}: {detail}") from exc


def run_day(policy: DispatchPolicy, mg: Microgrid, realized, forecaster: Forecaster,
            rtro: RtroConfig | None = None, tsro: TsroConfig | None = None,
            seed: int = 0, day: int = 0) -> OperationLog:
    """Operate one day under `policy` and return its OperationLog.

    The realized load is revealed one step at a time; the forecaster only
    ever sees realized[:t]. Indicators use `rtro` (the RTRO policy's own
    config when omitted) for every policy so logs stay comparable.
    """
    steps = mg.horizon
    realized = as_vector(realized, "realized load", steps)
    cfg = rtro if rtro is not None else getattr(policy, "cfg", None) or RtroConfig()
    tsro = tsro if tsro is not None else TsroConfig()
    state = DayState(mg)
    oplog = OperationLog(policy=policy.name, day=day)

    pi = _checked(forecaster.interval(0, realized[:0]), steps)
    solve_ms = _initial_solve(state, pi, tsro, seed, oplog)
    inputs = TriggerInputs(t=0, dtau=0, psi_g=0.0, psi_c=0.0, psi=0.0, chi=0)
    chi = 0
    executed = {k: np.zeros(steps) for k in KEYS}

    for t in range(steps):
        if t > 0:
            pi = _checked(forecaster.interval(t, realized[:t]), steps - t)
            inputs = indicators(state, pi.median, cfg)
            chi, solve_ms = int(policy.should_resolve(state, inputs)), 0.0
            if chi:
                solve_ms, committed = _resolve(state, pi, tsro, seed + t, oplog)
                chi = int(committed)

        grid_sch = float(state.schedule.grid()[t])
        x, mg_t, plan, emergency = _settle(state, realized[t])
        dt = mg_t.config.dt_hours
        _, da = day_ahead_cost(x, mg_t.prices, dt)
        rt = real_time_cost(plan, mg_t.prices, dt)
        p = realized_powers(x, plan)
        for k in KEYS:
            executed[k][t] = p[k][0]
        if not emergency:
            found = check_feasibility(x, plan, LoadTrajectory([realized[t]]), mg_t.renewables,
                                      mg_t.config, network=mg.network)
            oplog.violations.extend(f"t={t}: {v}" for v in found)
        state.advance(plan.e[1])
        oplog.add_step(StepRecord(
            t=t, load_real=float(realized[t]), load_lower=float(pi.lower[0]),
            load_med=float(pi.median[0]), load_upper=float(pi.upper[0]), grid_sch=grid_sch,
            grid=float(p["buy"][0] - p["sell"][0]), p_ess=float(p["dis"][0] - p["ch"][0]),
            soc=state.soc, day_ahead=da, real_time=rt, psi_g=inputs.psi_g,
            psi_c=inputs.psi_c, psi=inputs.psi, chi=chi, emergency=emergency,
            solve_ms=solve_ms,
        ))

    oplog.simultaneous = [f"t={t}: {pair}" for t, pair in detect_simultaneity(executed)]
    if oplog.violations:
        log.warning("Day %d (%s): %d feasibility violation(s), first %s", day, policy.name,
                    len(oplog.violations), oplog.violations[0])
    log.info("Day %d (%s): cost=%.2f cvar90=%.4f solves=%d solve_time=%.0fms", day,
             policy.name, oplog.total_cost, oplog.cvar_step, oplog.resolve_count,
             oplog.total_solve_ms)
    return oplog


def _checked(pi: PredictionInterval, steps: int) -> PredictionInterval:
    if pi.horizon != steps:
        raise DimensionError(f"forecast covers {pi.horizon} steps, {steps} remain")
    return pi
