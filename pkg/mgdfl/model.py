"""
mgdfl physical model.

Cost functions, ESS dynamics and feasibility checks shared by the robust
dispatch, the training surrogate and the online simulator. Everything here
is a pure function of its inputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from mgdfl.errors import DimensionError
from mgdfl.objects import (
    KEYS, FirstStageSchedule, LoadTrajectory, MicrogridConfig, PriceSchedule,
    RecoursePlan, RenewableProfile,
)

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6


@dataclass(frozen=True)
class Violation:
    """One violated constraint: name, step and how far past the limit."""
    constraint: str
    step: int
    magnitude: float

    def __str__(self) -> str:
        return f"{self.constraint}@{self.step} ({self.magnitude:.6g})"


def _check_horizon(x: FirstStageSchedule, y: RecoursePlan) -> int:
    if x.horizon != y.horizon:
        raise DimensionError(f"schedule covers {x.horizon} steps, recourse covers {y.horizon}")
    return x.horizon


# ----------------------------------------------------------------------
# Linkage and costs
# ----------------------------------------------------------------------

def realized_powers(x: FirstStageSchedule, y: RecoursePlan) -> dict[str, np.ndarray]:
    """Realized power per key: scheduled + upward - downward adjustment."""
    _check_horizon(x, y)
    return {k: x.power(k) + y.up[k] - y.down[k] for k in KEYS}


def day_ahead_cost(x: FirstStageSchedule, prices: PriceSchedule,
                   dt_hours: float = 0.25) -> tuple[np.ndarray, float]:
    """Scheduled cost per step and in total ($)."""
    if prices.horizon != x.horizon:
        raise DimensionError(f"prices cover {prices.horizon} steps, schedule covers {x.horizon}")
    per_step = (prices.buy_da * x.buy - prices.sell_da * x.sell
                + prices.c_ch * x.ch + prices.c_dis * x.dis) * dt_hours
    return per_step, float(per_step.sum())


def real_time_cost_per_step(y: RecoursePlan, prices: PriceSchedule,
                            dt_hours: float = 0.25) -> np.ndarray:
    per_step = prices.c_dlc * y.p_dlc + prices.c_cur * (y.p_cur_wt + y.p_cur_pv)
    for k in KEYS:
        per_step = per_step + prices.pi_up[k] * y.up[k] + prices.pi_down[k] * y.down[k]
    return per_step * dt_hours


def real_time_cost(y: RecoursePlan, prices: PriceSchedule, dt_hours: float = 0.25) -> float:
    """Recourse penalties plus DLC and curtailment cost ($)."""
    return float(real_time_cost_per_step(y, prices, dt_hours).sum())


# ----------------------------------------------------------------------
# ESS
# ----------------------------------------------------------------------

def ess_step(e, p_ch, p_dis, cfg: MicrogridConfig):
    """Energy after one step of charging p_ch and discharging p_dis."""
    return e + cfg.eta_ch * p_ch * cfg.dt_hours - p_dis * cfg.dt_hours / cfg.eta_dis


def ess_trajectory(e0: float, p_ch: np.ndarray, p_dis: np.ndarray,
                   cfg: MicrogridConfig) -> np.ndarray:
    """Energy path of length T+1 obtained by applying ess_step T times."""
    e = np.empty(len(p_ch) + 1)
    e[0] = e0
    for t in range(len(p_ch)):
        e[t + 1] = ess_step(e[t], p_ch[t], p_dis[t], cfg)
    return e


# ----------------------------------------------------------------------
# Balance and feasibility
# ----------------------------------------------------------------------

def balance_residual(x: FirstStageSchedule, y: RecoursePlan, load: LoadTrajectory,
                     res: RenewableProfile) -> np.ndarray:
    """Supply minus served load per step; zero when balanced.

    Recourse curtailment comes on top of the scheduled curtailment in x.
    """
    p = realized_powers(x, y)
    if load.horizon != x.horizon or res.horizon != x.horizon:
        raise DimensionError("load/renewables do not match the schedule horizon")
    supply = ((res.p_wt - x.cur_wt_sch - y.p_cur_wt) + (res.p_pv - x.cur_pv_sch - y.p_cur_pv)
              + p["dis"] - p["ch"] + p["buy"] - p["sell"])
    return supply - (load.values - y.p_dlc)


def _above(values: np.ndarray, limit, tol: float, name: str, out: list[Violation]) -> None:
    excess = values - limit
    for t in np.flatnonzero(excess > tol):
        out.append(Violation(name, int(t), float(excess[t])))


def _below(values: np.ndarray, limit, tol: float, name: str, out: list[Violation]) -> None:
    short = limit - values
    for t in np.flatnonzero(short > tol):
        out.append(Violation(name, int(t), float(short[t])))


def check_feasibility(x: FirstStageSchedule, y: RecoursePlan, load: LoadTrajectory,
                      res: RenewableProfile, cfg: MicrogridConfig,
                      tol: float = DEFAULT_TOL, network=None) -> list[Violation]:
    """Every violated operational constraint of (x, y) under `load`.

    `network` is an optional LinDistFlow model; when given, bus voltages
    of the realized dispatch are checked against cfg.v_max.
    """
    p = realized_powers(x, y)
    out: list[Violation] = []

    for k in KEYS:
        _below(p[k], 0.0, tol, f"{k}_limit", out)
        _above(p[k], cfg.device_max(k), tol, f"{k}_limit", out)
        _below(y.up[k], 0.0, tol, f"reserve_up[{k}]", out)
        _above(y.up[k], cfg.reserve_up[k], tol, f"reserve_up[{k}]", out)
        _below(y.down[k], 0.0, tol, f"reserve_down[{k}]", out)
        _above(y.down[k], cfg.reserve_down[k], tol, f"reserve_down[{k}]", out)

    _below(y.e, 0.0, tol, "ess_energy_limit", out)
    _above(y.e, cfg.e_ess_max, tol, "ess_energy_limit", out)
    if abs(y.e[0] - cfg.e_init) > tol:
        out.append(Violation("ess_initial", 0, float(abs(y.e[0] - cfg.e_init))))
    drift = np.abs(y.e[1:] - ess_step(y.e[:-1], p["ch"], p["dis"], cfg))
    for t in np.flatnonzero(drift > tol):
        out.append(Violation("ess_dynamics", int(t), float(drift[t])))

    _below(y.p_dlc, 0.0, tol, "dlc_limit", out)
    _above(y.p_dlc, cfg.dlc_ratio * load.values, tol, "dlc_limit", out)
    _below(y.p_cur_wt, 0.0, tol, "curtail_wt_limit", out)
    _above(y.p_cur_wt + x.cur_wt_sch, res.p_wt, tol, "curtail_wt_limit", out)
    _below(y.p_cur_pv, 0.0, tol, "curtail_pv_limit", out)
    _above(y.p_cur_pv + x.cur_pv_sch, res.p_pv, tol, "curtail_pv_limit", out)

    resid = np.abs(balance_residual(x, y, load, res))
    for t in np.flatnonzero(resid > tol):
        out.append(Violation("power_balance", int(t), float(resid[t])))

    if network is not None:
        v = network.voltages(load.values - y.p_dlc, {
            "ess": p["dis"] - p["ch"],
            "pv": res.p_pv - x.cur_pv_sch - y.p_cur_pv,
            "wt": res.p_wt - x.cur_wt_sch - y.p_cur_wt,
        })
        dev = np.max(np.abs(v - 1.0), axis=0)
        _above(dev, cfg.v_max, tol, "voltage_limit", out)

    return out


def check_schedule(x: FirstStageSchedule, cfg: MicrogridConfig,
                   tol: float = DEFAULT_TOL) -> list[Violation]:
    """Device limits and nominal ESS dynamics of a first-stage schedule."""
    out: list[Violation] = []
    for k in KEYS:
        _below(x.power(k), 0.0, tol, f"{k}_limit", out)
        _above(x.power(k), cfg.device_max(k), tol, f"{k}_limit", out)
    _below(x.e_sch, 0.0, tol, "ess_energy_limit", out)
    _above(x.e_sch, cfg.e_ess_max, tol, "ess_energy_limit", out)
    if abs(x.e_sch[0] - cfg.e_init) > tol:
        out.append(Violation("ess_initial", 0, float(abs(x.e_sch[0] - cfg.e_init))))
    drift = np.abs(x.e_sch[1:] - ess_step(x.e_sch[:-1], x.ch, x.dis, cfg))
    for t in np.flatnonzero(drift > tol):
        out.append(Violation("ess_dynamics", int(t), float(drift[t])))
    return out


def detect_simultaneity(powers: dict[str, np.ndarray],
                        tol: float = DEFAULT_TOL) -> list[tuple[int, str]]:
    """Steps where both directions of a device are active at once."""
    found: list[tuple[int, str]] = []
    for a, b in (("buy", "sell"), ("ch", "dis")):
        both = np.flatnonzero((powers[a] > tol) & (powers[b] > tol))
        found.extend((int(t), f"{a}/{b}") for t in both)
    found.sort()
    if found:
        log.warning("Simultaneous operation at %d step(s), first %s", len(found), found[0])
    return found
