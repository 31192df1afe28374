"""
mgdfl Object Model.

Defines the microgrid domain types as dataclasses:
  MicrogridConfig     - device limits, efficiencies, DLC ratio, reserve caps
  PriceSchedule       - day-ahead prices and real-time penalty coefficients
  RenewableProfile    - known WT and PV output over the horizon
  LoadTrajectory      - one load realization (or forecast) over the horizon
  FirstStageSchedule  - scheduled grid/ESS powers plus nominal auxiliaries
  RecoursePlan        - upward/downward adjustments, DLC and curtailment
  UncertaintySet      - per-step load box built from a prediction interval
  ForecastDescription - (lower, median, upper) trajectories for the surrogate
  Microgrid           - config + prices + renewables (+ network) bundle

Powers are in kW, energies in kWh, prices in $/kWh. Arrays are float64
numpy vectors indexed by step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np

from mgdfl.errors import ConfigError, DimensionError

if TYPE_CHECKING:
    from mgdfl.network import LinDistFlow

log = logging.getLogger(__name__)

# Recourse keys, in the order used by every stacked array
KEYS = ("buy", "sell", "ch", "dis")

DEFAULT_RESERVE_UP = {"buy": 1500.0, "sell": 1500.0, "ch": 1100.0, "dis": 1100.0}
DEFAULT_RESERVE_DOWN = {"buy": 1500.0, "sell": 1500.0, "ch": 1100.0, "dis": 1100.0}
DEFAULT_PI_UP = {"buy": 0.25, "sell": 0.04, "ch": 0.02, "dis": 0.02}
DEFAULT_PI_DOWN = {"buy": 0.05, "sell": 0.12, "ch": 0.02, "dis": 0.02}


def as_vector(values, name: str, length: int | None = None) -> np.ndarray:
    """Coerce to a 1-D float64 array, optionally checking its length."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if length is not None and arr.shape[0] != length:
        raise DimensionError(f"{name}: expected length {length}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name}: non-finite values")
    return arr


def _check_keys(mapping: dict[str, float], name: str) -> dict[str, float]:
    missing = [k for k in KEYS if k not in mapping]
    extra = [k for k in mapping if k not in KEYS]
    if missing or extra:
        raise ConfigError(f"{name}: keys must be {KEYS}, missing={missing} extra={extra}")
    out = {k: float(mapping[k]) for k in KEYS}
    for k, v in out.items():
        if v < 0:
            raise ConfigError(f"{name}[{k}] must be >= 0, got {v!r}")
    return out


def _block_mean(arr: np.ndarray, stride: int) -> np.ndarray:
    if arr.shape[0] % stride:
        raise DimensionError(f"horizon {arr.shape[0]} not divisible by stride {stride}")
    return arr.reshape(-1, stride).mean(axis=1)


# ----------------------------------------------------------------------
# Configuration and exogenous inputs
# ----------------------------------------------------------------------

@dataclass
class MicrogridConfig:
    """Physical parameters of the microgrid (defaults follow the 33-bus case)."""
    horizon_steps: int = 96
    dt_hours: float = 0.25
    p_pcc_max: float = 5000.0
    p_ess_max: float = 1100.0
    e_ess_max: float = 6000.0
    eta_ch: float = 0.95
    eta_dis: float = 0.95
    e_init: float = 3000.0
    dlc_ratio: float = 0.2
    reserve_up: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_RESERVE_UP))
    reserve_down: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_RESERVE_DOWN))
    v_max: float = 0.10
    p_pv_max: float = 3200.0
    p_wt_max: float = 1000.0

    def __post_init__(self):
        if int(self.horizon_steps) != self.horizon_steps or self.horizon_steps < 1:
            raise ConfigError(f"horizon_steps must be a positive integer, got {self.horizon_steps!r}")
        self.horizon_steps = int(self.horizon_steps)
        if self.dt_hours <= 0:
            raise ConfigError(f"dt_hours must be > 0, got {self.dt_hours!r}")
        for name in ("p_pcc_max", "p_ess_max", "e_ess_max", "v_max", "p_pv_max", "p_wt_max"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)!r}")
        for name in ("eta_ch", "eta_dis"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ConfigError(f"{name} must be in (0, 1], got {v!r}")
        if not 0 <= self.dlc_ratio <= 1:
            raise ConfigError(f"dlc_ratio must be in [0, 1], got {self.dlc_ratio!r}")
        if not 0 <= self.e_init <= self.e_ess_max:
            raise ConfigError(f"e_init must be in [0, e_ess_max], got {self.e_init!r}")
        self.reserve_up = _check_keys(self.reserve_up, "reserve_up")
        self.reserve_down = _check_keys(self.reserve_down, "reserve_down")

    def device_max(self, key: str) -> float:
        """Upper limit of the realized power for a recourse key."""
        return self.p_pcc_max if key in ("buy", "sell") else self.p_ess_max


@dataclass
class PriceSchedule:
    """Day-ahead settlement prices and real-time penalties ($/kWh)."""
    buy_da: np.ndarray
    sell_da: np.ndarray
    c_ch: float = 0.005
    c_dis: float = 0.005
    pi_up: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_PI_UP))
    pi_down: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_PI_DOWN))
    c_dlc: float = 0.30
    c_cur: float = 0.15

    def __post_init__(self):
        self.buy_da = as_vector(self.buy_da, "buy_da")
        self.sell_da = as_vector(self.sell_da, "sell_da", self.buy_da.shape[0])
        if np.any(self.buy_da < 0) or np.any(self.sell_da < 0):
            raise ConfigError("day-ahead prices must be >= 0")
        for name in ("c_ch", "c_dis", "c_dlc", "c_cur"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)!r}")
        self.pi_up = _check_keys(self.pi_up, "pi_up")
        self.pi_down = _check_keys(self.pi_down, "pi_down")

    @property
    def horizon(self) -> int:
        return self.buy_da.shape[0]

    @classmethod
    def flat(cls, steps: int, buy: float = 0.1, sell: float = 0.05, **kwargs) -> PriceSchedule:
        """Constant-price schedule, mostly for small test instances."""
        return cls(buy_da=np.full(steps, buy), sell_da=np.full(steps, sell), **kwargs)

    def check_arbitrage(self) -> np.ndarray:
        """Steps where sell_da > buy_da (allowed, but logged)."""
        return np.flatnonzero(self.sell_da > self.buy_da)

    def window(self, start: int, stop: int) -> PriceSchedule:
        return replace(self, buy_da=self.buy_da[start:stop].copy(),
                       sell_da=self.sell_da[start:stop].copy())

    def coarsen(self, stride: int) -> PriceSchedule:
        return replace(self, buy_da=_block_mean(self.buy_da, stride),
                       sell_da=_block_mean(self.sell_da, stride))


@dataclass
class RenewableProfile:
    """Known WT and PV output (kW)."""
    p_wt: np.ndarray
    p_pv: np.ndarray

    def __post_init__(self):
        self.p_wt = as_vector(self.p_wt, "p_wt")
        self.p_pv = as_vector(self.p_pv, "p_pv", self.p_wt.shape[0])
        if np.any(self.p_wt < 0) or np.any(self.p_pv < 0):
            raise ConfigError("renewable output must be >= 0")

    @property
    def horizon(self) -> int:
        return self.p_wt.shape[0]

    @classmethod
    def zeros(cls, steps: int) -> RenewableProfile:
        return cls(p_wt=np.zeros(steps), p_pv=np.zeros(steps))

    def check_capacity(self, cfg: MicrogridConfig, tol: float = 1e-6) -> None:
        if np.any(self.p_wt > cfg.p_wt_max + tol):
            raise ConfigError(f"p_wt exceeds p_wt_max={cfg.p_wt_max!r}")
        if np.any(self.p_pv > cfg.p_pv_max + tol):
            raise ConfigError(f"p_pv exceeds p_pv_max={cfg.p_pv_max!r}")

    def window(self, start: int, stop: int) -> RenewableProfile:
        return RenewableProfile(p_wt=self.p_wt[start:stop], p_pv=self.p_pv[start:stop])

    def coarsen(self, stride: int) -> RenewableProfile:
        return RenewableProfile(p_wt=_block_mean(self.p_wt, stride),
                                p_pv=_block_mean(self.p_pv, stride))


@dataclass
class LoadTrajectory:
    """Aggregate load over the horizon (kW)."""
    values: np.ndarray

    def __post_init__(self):
        self.values = as_vector(self.values, "load")
        if np.any(self.values < 0):
            raise ConfigError("load values must be >= 0")

    @property
    def horizon(self) -> int:
        return self.values.shape[0]


# ----------------------------------------------------------------------
# Decisions
# ----------------------------------------------------------------------

@dataclass
class FirstStageSchedule:
    """Scheduled powers per key plus the nominal ESS path and curtailment."""
    buy: np.ndarray
    sell: np.ndarray
    ch: np.ndarray
    dis: np.ndarray
    e_sch: np.ndarray
    cur_wt_sch: np.ndarray | None = None
    cur_pv_sch: np.ndarray | None = None

    def __post_init__(self):
        self.buy = as_vector(self.buy, "buy")
        steps = self.buy.shape[0]
        self.sell = as_vector(self.sell, "sell", steps)
        self.ch = as_vector(self.ch, "ch", steps)
        self.dis = as_vector(self.dis, "dis", steps)
        self.e_sch = as_vector(self.e_sch, "e_sch", steps + 1)
        self.cur_wt_sch = (np.zeros(steps) if self.cur_wt_sch is None
                           else as_vector(self.cur_wt_sch, "cur_wt_sch", steps))
        self.cur_pv_sch = (np.zeros(steps) if self.cur_pv_sch is None
                           else as_vector(self.cur_pv_sch, "cur_pv_sch", steps))

    @property
    def horizon(self) -> int:
        return self.buy.shape[0]

    def power(self, key: str) -> np.ndarray:
        return getattr(self, key)

    @classmethod
    def zeros(cls, steps: int, e_init: float = 0.0) -> FirstStageSchedule:
        z = np.zeros(steps)
        return cls(buy=z, sell=z, ch=z, dis=z, e_sch=np.full(steps + 1, float(e_init)))

    def window(self, start: int, stop: int | None = None) -> FirstStageSchedule:
        """Remaining part of the schedule from step `start` on."""
        stop = self.horizon if stop is None else stop
        return FirstStageSchedule(
            buy=self.buy[start:stop], sell=self.sell[start:stop],
            ch=self.ch[start:stop], dis=self.dis[start:stop],
            e_sch=self.e_sch[start:stop + 1],
            cur_wt_sch=self.cur_wt_sch[start:stop],
            cur_pv_sch=self.cur_pv_sch[start:stop],
        )

    def grid(self) -> np.ndarray:
        """Scheduled net grid exchange (buy - sell)."""
        return self.buy - self.sell

    def to_dict(self) -> dict[str, list[float]]:
        return {
            "buy": self.buy.tolist(), "sell": self.sell.tolist(),
            "ch": self.ch.tolist(), "dis": self.dis.tolist(),
            "e_sch": self.e_sch.tolist(),
            "cur_wt_sch": self.cur_wt_sch.tolist(),
            "cur_pv_sch": self.cur_pv_sch.tolist(),
        }


@dataclass
class RecoursePlan:
    """Wait-and-see adjustments for one load realization."""
    up: dict[str, np.ndarray]
    down: dict[str, np.ndarray]
    e: np.ndarray
    p_dlc: np.ndarray
    p_cur_wt: np.ndarray
    p_cur_pv: np.ndarray

    def __post_init__(self):
        self.p_dlc = as_vector(self.p_dlc, "p_dlc")
        steps = self.p_dlc.shape[0]
        self.up = {k: as_vector(self.up[k], f"up[{k}]", steps) for k in KEYS}
        self.down = {k: as_vector(self.down[k], f"down[{k}]", steps) for k in KEYS}
        self.e = as_vector(self.e, "e", steps + 1)
        self.p_cur_wt = as_vector(self.p_cur_wt, "p_cur_wt", steps)
        self.p_cur_pv = as_vector(self.p_cur_pv, "p_cur_pv", steps)

    @property
    def horizon(self) -> int:
        return self.p_dlc.shape[0]

    @classmethod
    def zeros(cls, steps: int, e_init: float = 0.0) -> RecoursePlan:
        z = np.zeros(steps)
        return cls(up={k: z for k in KEYS}, down={k: z for k in KEYS},
                   e=np.full(steps + 1, float(e_init)), p_dlc=z, p_cur_wt=z, p_cur_pv=z)

    def is_zero(self, tol: float = 1e-6) -> bool:
        adjust = max(max(np.max(np.abs(self.up[k]), initial=0.0),
                         np.max(np.abs(self.down[k]), initial=0.0)) for k in KEYS)
        return adjust <= tol and np.max(np.abs(self.p_dlc), initial=0.0) <= tol

    def to_dict(self) -> dict[str, object]:
        return {
            "up": {k: v.tolist() for k, v in self.up.items()},
            "down": {k: v.tolist() for k, v in self.down.items()},
            "e": self.e.tolist(),
            "p_dlc": self.p_dlc.tolist(),
            "p_cur_wt": self.p_cur_wt.tolist(),
            "p_cur_pv": self.p_cur_pv.tolist(),
        }


# ----------------------------------------------------------------------
# Uncertainty
# ----------------------------------------------------------------------

@dataclass
class UncertaintySet:
    """Per-step load box [lower, upper]; nominal drives first-stage feasibility."""
    lower: np.ndarray
    upper: np.ndarray
    nominal: np.ndarray | None = None

    def __post_init__(self):
        self.lower = as_vector(self.lower, "lower")
        self.upper = as_vector(self.upper, "upper", self.lower.shape[0])
        if np.any(self.lower < 0):
            raise ConfigError("uncertainty set lower bound must be >= 0")
        if np.any(self.lower > self.upper):
            raise ConfigError("uncertainty set requires lower <= upper")
        if self.nominal is None:
            self.nominal = 0.5 * (self.lower + self.upper)
        else:
            self.nominal = as_vector(self.nominal, "nominal", self.lower.shape[0])

    @property
    def horizon(self) -> int:
        return self.lower.shape[0]

    @classmethod
    def degenerate(cls, load) -> UncertaintySet:
        values = as_vector(load.values if isinstance(load, LoadTrajectory) else load, "load")
        return cls(lower=values, upper=values.copy(), nominal=values.copy())

    def is_degenerate(self) -> bool:
        return bool(np.all(self.lower == self.upper))

    def vertex(self, at_upper) -> np.ndarray:
        """Box vertex selecting upper where at_upper is true."""
        return np.where(np.asarray(at_upper, dtype=bool), self.upper, self.lower)

    def contains(self, load, tol: float = 1e-9) -> bool:
        values = load.values if isinstance(load, LoadTrajectory) else np.asarray(load)
        return bool(np.all(values >= self.lower - tol) and np.all(values <= self.upper + tol))

    def window(self, start: int, stop: int) -> UncertaintySet:
        return UncertaintySet(self.lower[start:stop], self.upper[start:stop],
                              self.nominal[start:stop])


@dataclass
class ForecastDescription:
    """The (lower, median, upper) forecast vector D-hat consumed by the surrogate."""
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.median = as_vector(self.median, "median")
        steps = self.median.shape[0]
        self.lower = as_vector(self.lower, "lower", steps)
        self.upper = as_vector(self.upper, "upper", steps)
        tol = 1e-9 * max(1.0, float(np.max(np.abs(self.upper), initial=0.0)))
        if np.any(self.lower > self.median + tol) or np.any(self.median > self.upper + tol):
            raise ConfigError("forecast description requires lower <= median <= upper")

    @property
    def horizon(self) -> int:
        return self.median.shape[0]

    @classmethod
    def degenerate(cls, load) -> ForecastDescription:
        values = as_vector(load.values if isinstance(load, LoadTrajectory) else load, "load")
        return cls(lower=values, median=values.copy(), upper=values.copy())

    @classmethod
    def from_vector(cls, vec) -> ForecastDescription:
        vec = as_vector(vec, "forecast vector")
        if vec.shape[0] % 3:
            raise DimensionError(f"forecast vector length {vec.shape[0]} not divisible by 3")
        lower, median, upper = np.split(vec, 3)
        return cls(lower=lower, median=median, upper=upper)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.lower, self.median, self.upper])

    def scenarios(self) -> list[np.ndarray]:
        return [self.lower, self.median, self.upper]


# ----------------------------------------------------------------------
# Bundle
# ----------------------------------------------------------------------

@dataclass
class Microgrid:
    """Everything the dispatch programs need besides the load."""
    config: MicrogridConfig
    prices: PriceSchedule
    renewables: RenewableProfile
    network: LinDistFlow | None = None

    def __post_init__(self):
        steps = self.config.horizon_steps
        if self.prices.horizon != steps:
            raise DimensionError(f"prices cover {self.prices.horizon} steps, horizon is {steps}")
        if self.renewables.horizon != steps:
            raise DimensionError(f"renewables cover {self.renewables.horizon} steps, horizon is {steps}")
        self.renewables.check_capacity(self.config)

    @property
    def horizon(self) -> int:
        return self.config.horizon_steps

    def window(self, start: int, stop: int | None = None,
               e_init: float | None = None) -> Microgrid:
        """Sub-horizon [start, stop) starting from energy e_init."""
        stop = self.horizon if stop is None else stop
        if not 0 <= start < stop <= self.horizon:
            raise DimensionError(f"invalid window [{start}, {stop}) of horizon {self.horizon}")
        cfg = replace(self.config, horizon_steps=stop - start,
                      e_init=self.config.e_init if e_init is None
                      else float(np.clip(e_init, 0.0, self.config.e_ess_max)))
        return Microgrid(cfg, self.prices.window(start, stop),
                         self.renewables.window(start, stop), self.network)

    def coarsen(self, stride: int) -> Microgrid:
        """Average prices and renewables over blocks of `stride` steps."""
        if stride == 1:
            return self
        cfg = replace(self.config, horizon_steps=self.horizon // stride,
                      dt_hours=self.config.dt_hours * stride)
        return Microgrid(cfg, self.prices.coarsen(stride),
                         self.renewables.coarsen(stride), self.network)
