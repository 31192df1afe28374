"""
mgdfl Config - The RunConfig JSON document.

One document configures every command:

    {
      "microgrid": {...},   MicrogridConfig
      "tariff": {...},      time-of-use prices and real-time penalties
      "network": {...},     feeder model switch and custom feeder files
      "train": {...},       TrainConfig
      "rtro": {...},        RtroConfig
      "synthetic": {...},   SyntheticConfig
      "tsro": {...},        TsroConfig
      "feeder": "ieee33", "policy": "rtro", "mode": "cvar-dfl",
      "output_dir": "out", "seed": 0
    }

Missing keys take their defaults; unknown keys at any level are rejected.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from mgdfl.data import SyntheticConfig
from mgdfl.errors import ConfigError
from mgdfl.feeders import FEEDERS
from mgdfl.forecast import MODES, TrainConfig
from mgdfl.network import LinDistFlow, ieee_feeder, lindistflow_constraints, load_topology
from mgdfl.objects import (
    DEFAULT_PI_DOWN, DEFAULT_PI_UP, Microgrid, MicrogridConfig, PriceSchedule, RenewableProfile,
)
from mgdfl.online.policies import POLICIES
from mgdfl.online.simulator import RtroConfig
from mgdfl.protocol import config_hash, read_json
from mgdfl.tsro import TsroConfig

log = logging.getLogger(__name__)

# (start hour, stop hour, buy price $/kWh)
DEFAULT_BANDS = ((0, 8, 0.06), (8, 12, 0.12), (12, 17, 0.09), (17, 21, 0.18), (21, 24, 0.09))
FEEDER_CHOICES = tuple(FEEDERS) + ("custom",)


@dataclass
class Tariff:
    """Time-of-use day-ahead prices and the real-time penalty coefficients."""
    bands: tuple[tuple[float, float, float], ...] = DEFAULT_BANDS
    sell_ratio: float = 0.5
    c_ch: float = 0.005
    c_dis: float = 0.005
    pi_up: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_PI_UP))
    pi_down: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_PI_DOWN))
    c_dlc: float = 0.30
    c_cur: float = 0.15

    def __post_init__(self):
        try:
            self.bands = tuple((float(a), float(b), float(p)) for a, b, p in self.bands)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"tariff.bands must be [start, stop, price] triples: {exc}") from exc
        edge = 0.0
        for start, stop, price in self.bands:
            if start != edge or stop <= start:
                raise ConfigError(f"tariff.bands must tile [0, 24) in order, got {self.bands!r}")
            if price < 0:
                raise ConfigError(f"tariff price must be >= 0, got {price!r}")
            edge = stop
        if edge != 24.0:
            raise ConfigError(f"tariff.bands end at {edge!r}, expected 24")
        if self.sell_ratio < 0:
            raise ConfigError(f"tariff.sell_ratio must be >= 0, got {self.sell_ratio!r}")

    def buy_price(self, hours) -> np.ndarray:
        hours = np.mod(np.asarray(hours, dtype=float), 24.0)
        out = np.empty_like(hours)
        for start, stop, price in self.bands:
            out[(hours >= start) & (hours < stop)] = price
        return out

    def schedule(self, start_step: int, steps: int, dt_hours: float) -> PriceSchedule:
        """Prices for `steps` steps beginning at step-of-day `start_step`."""
        hours = (start_step + np.arange(steps)) * dt_hours
        buy = self.buy_price(hours)
        sched = PriceSchedule(buy_da=buy, sell_da=self.sell_ratio * buy, c_ch=self.c_ch,
                              c_dis=self.c_dis, pi_up=dict(self.pi_up),
                              pi_down=dict(self.pi_down), c_dlc=self.c_dlc, c_cur=self.c_cur)
        arbitrage = sched.check_arbitrage()
        if arbitrage.size:
            log.warning("Sell price above buy price at %d step(s)", arbitrage.size)
        return sched


@dataclass
class NetworkConfig:
    """Whether dispatch carries voltage rows, and where a custom feeder lives."""
    enabled: bool = True
    branches: str | None = None
    loads: str | None = None
    placement: dict[str, int] | None = None

    def __post_init__(self):
        if self.placement is not None:
            self.placement = {str(k): int(v) for k, v in self.placement.items()}


_SECTIONS = {
    "microgrid": MicrogridConfig,
    "tariff": Tariff,
    "network": NetworkConfig,
    "train": TrainConfig,
    "rtro": RtroConfig,
    "synthetic": SyntheticConfig,
    "tsro": TsroConfig,
}
_SCALARS = ("feeder", "policy", "mode", "output_dir", "seed")


def _section(cls, doc: Any, name: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {unknown}")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(f"bad value in {name!r}: {exc}") from exc


@dataclass
class RunConfig:
    microgrid: MicrogridConfig = field(default_factory=MicrogridConfig)
    tariff: Tariff = field(default_factory=Tariff)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    rtro: RtroConfig = field(default_factory=RtroConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    tsro: TsroConfig = field(default_factory=TsroConfig)
    feeder: str = "ieee33"
    policy: str = "rtro"
    mode: str = "cvar-dfl"
    output_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        if self.feeder not in FEEDER_CHOICES:
            raise ConfigError(f"feeder must be one of {FEEDER_CHOICES}, got {self.feeder!r}")
        if self.feeder == "custom" and not self.network.branches:
            raise ConfigError("feeder 'custom' needs network.branches")
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {sorted(POLICIES)}, got {self.policy!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if int(self.seed) != self.seed:
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        self.seed = int(self.seed)
        if self.train.mode != self.mode:
            self.train = replace(self.train, mode=self.mode)

    # ------------------------------------------------------------------
    # Document round trip
    # ------------------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> RunConfig:
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        unknown = sorted(set(doc) - set(_SECTIONS) - set(_SCALARS))
        if unknown:
            raise ConfigError(f"unknown config key(s): {unknown}")
        kwargs: dict[str, Any] = {k: doc[k] for k in _SCALARS if k in doc}
        for name, section in _SECTIONS.items():
            kwargs[name] = _section(section, doc.get(name, {}), name)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> RunConfig:
        cfg = cls.from_dict(read_json(path))
        log.info("Loaded config %s (hash %s)", path, cfg.hash()[:12])
        return cfg

    def to_dict(self) -> dict[str, Any]:
        doc = {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}
        doc["tariff"]["bands"] = [list(b) for b in self.tariff.bands]
        doc["train"]["quantiles"] = list(self.train.quantiles)
        doc.update({k: getattr(self, k) for k in _SCALARS})
        return doc

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def with_overrides(self, seed: int | None = None, output_dir: str | None = None,
                       policy: str | None = None, mode: str | None = None,
                       feeder: str | None = None, workers: int | None = None) -> RunConfig:
        """Apply command-line flags; a seed reaches every seeded section."""
        changes: dict[str, Any] = {}
        if seed is not None:
            changes.update(seed=seed, train=replace(self.train, seed=seed),
                           synthetic=replace(self.synthetic, seed=seed))
        if output_dir is not None:
            changes["output_dir"] = str(output_dir)
        if policy is not None:
            changes["policy"] = policy
        if mode is not None:
            changes["mode"] = mode
        if feeder is not None:
            changes["feeder"] = feeder
        if workers is not None:
            changes["train"] = replace(changes.get("train", self.train), workers=workers)
            changes["tsro"] = replace(self.tsro, workers=workers)
        return replace(self, **changes)

    # ------------------------------------------------------------------
    # Builders
    # ------------------------------------------------------------------

    def build_network(self, feeder: str | None = None) -> LinDistFlow | None:
        if not self.network.enabled:
            return None
        feeder = feeder or self.feeder
        if feeder == "custom":
            topology = load_topology(self.network.branches, bus_loads=self.network.loads,
                                     placement=self.network.placement)
        else:
            topology = ieee_feeder(feeder, self.network.placement)
        return lindistflow_constraints(topology)

    def build_microgrid(self, renewables: RenewableProfile, start_step: int = 0,
                        network: LinDistFlow | None = None) -> Microgrid:
        """Microgrid over the renewables' horizon starting at step-of-day `start_step`."""
        steps = renewables.horizon
        cfg = replace(self.microgrid, horizon_steps=steps)
        prices = self.tariff.schedule(start_step, steps, cfg.dt_hours)
        return Microgrid(cfg, prices, renewables, network)
