"""
mgdfl Data - Synthetic days, CSV traces and forecast windows.

Traces are 15-minute frames with columns

    timestamp, load_kw, pv_kw, wt_kw

A dataset directory holds one `day_XXX.csv` per day, `days.csv` with the
typical/extreme labels and `manifest.json` (seed, config hash, files).

The synthetic load is a double-peak daily shape scaled by a weekday factor,
plus AR(1) noise and occasional spike events lasting a few steps. Days with
a spike are labeled extreme.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from mgdfl.errors import ConfigError, DimensionError
from mgdfl.forecast import FeatureWindow
from mgdfl.objects import LoadTrajectory, RenewableProfile
from mgdfl.protocol import write_json

log = logging.getLogger(__name__)

STEPS_PER_DAY = 96
STEP = pd.Timedelta(minutes=15)
COLUMNS = ("timestamp", "load_kw", "pv_kw", "wt_kw")
TYPICAL = "typical"
EXTREME = "extreme"


@dataclass
class SyntheticConfig:
    days: int = 30
    start: str = "2022-01-03"
    base_kw: float = 1500.0
    morning_peak_kw: float = 600.0
    evening_peak_kw: float = 900.0
    weekly_amplitude: float = 0.08
    ar1: float = 0.9
    sigma: float = 30.0
    spike_prob: float = 0.002
    spike_duration: int = 4
    spike_mean_kw: float = 600.0
    spike_std_kw: float = 150.0
    pv_peak_kw: float = 1800.0
    pv_cloud_min: float = 0.4
    wt_mean_kw: float = 450.0
    wt_ar1: float = 0.95
    wt_sigma: float = 40.0
    wt_max_kw: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        if int(self.days) != self.days or self.days < 1:
            raise ConfigError(f"days must be a positive integer, got {self.days!r}")
        for name in ("spike_prob", "pv_cloud_min", "weekly_amplitude"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"{name} must be in [0, 1], got {v!r}")
        for name in ("sigma", "spike_std_kw", "wt_sigma", "base_kw", "pv_peak_kw",
                     "wt_mean_kw", "wt_max_kw"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)!r}")
        for name in ("ar1", "wt_ar1"):
            if not -1 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must be in (-1, 1), got {getattr(self, name)!r}")
        if self.spike_duration < 1:
            raise ConfigError(f"spike_duration must be >= 1, got {self.spike_duration!r}")
        try:
            pd.Timestamp(self.start)
        except ValueError as exc:
            raise ConfigError(f"start is not a date: {self.start!r}") from exc


@dataclass
class DaySet:
    """Labeled days of 15-minute load and renewable traces."""
    frame: pd.DataFrame
    labels: list[str]
    spike_starts: np.ndarray | None = None

    def __post_init__(self):
        if len(self.frame) % STEPS_PER_DAY:
            raise DimensionError(f"{len(self.frame)} rows is not a whole number of days")
        if len(self.labels) != self.days:
            raise DimensionError(f"{len(self.labels)} labels for {self.days} days")
        bad = [lab for lab in self.labels if lab not in (TYPICAL, EXTREME)]
        if bad:
            raise ConfigError(f"unknown day label(s) {sorted(set(bad))!r}")

    @property
    def days(self) -> int:
        return len(self.frame) // STEPS_PER_DAY

    @property
    def load(self) -> np.ndarray:
        return self.frame["load_kw"].to_numpy(dtype=float)

    @property
    def timestamps(self) -> pd.DatetimeIndex:
        return pd.DatetimeIndex(self.frame["timestamp"])

    def day(self, i: int) -> pd.DataFrame:
        if not 0 <= i < self.days:
            raise IndexError(f"day {i} out of range (0..{self.days - 1})")
        return self.frame.iloc[i * STEPS_PER_DAY:(i + 1) * STEPS_PER_DAY].reset_index(drop=True)

    def day_load(self, i: int) -> LoadTrajectory:
        return LoadTrajectory(self.day(i)["load_kw"].to_numpy(dtype=float))

    def day_renewables(self, i: int) -> RenewableProfile:
        d = self.day(i)
        return RenewableProfile(p_wt=d["wt_kw"].to_numpy(dtype=float),
                                p_pv=d["pv_kw"].to_numpy(dtype=float))

    def indices(self, label: str | None = None) -> list[int]:
        return [i for i, lab in enumerate(self.labels) if label is None or lab == label]

    def slice_days(self, start: int, stop: int) -> DaySet:
        rows = self.frame.iloc[start * STEPS_PER_DAY:stop * STEPS_PER_DAY].reset_index(drop=True)
        spikes = None
        if self.spike_starts is not None:
            spikes = self.spike_starts[start * STEPS_PER_DAY:stop * STEPS_PER_DAY]
        return DaySet(rows, self.labels[start:stop], spikes)


# ----------------------------------------------------------------------
# Synthetic generator
# ----------------------------------------------------------------------

def base_profile(hours: np.ndarray, cfg: SyntheticConfig) -> np.ndarray:
    """Double-peak daily shape (kW) at fractional hours of day."""
    hours = np.asarray(hours, dtype=float)
    morning = np.exp(-0.5 * ((hours - 9.0) / 2.0) ** 2)
    evening = np.exp(-0.5 * ((hours - 19.5) / 2.5) ** 2)
    return cfg.base_kw + cfg.morning_peak_kw * morning + cfg.evening_peak_kw * evening


def weekly_factor(dow: np.ndarray, amplitude: float) -> np.ndarray:
    """1 on weekdays, 1 - amplitude on weekends."""
    return np.where(np.asarray(dow) >= 5, 1.0 - amplitude, 1.0)


def _ar1(rng: np.random.Generator, n: int, phi: float, sigma: float) -> np.ndarray:
    noise = rng.normal(0.0, sigma, n)
    out = np.zeros(n)
    for i in range(n):
        out[i] = (phi * out[i - 1] if i else 0.0) + noise[i]
    return out


def generate(cfg: SyntheticConfig) -> DaySet:
    """Reproducible synthetic dataset under cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.days * STEPS_PER_DAY
    ts = pd.date_range(pd.Timestamp(cfg.start), periods=n, freq=STEP)
    hours = np.asarray(ts.hour + ts.minute / 60.0, dtype=float)
    shape = base_profile(hours, cfg) * weekly_factor(np.asarray(ts.dayofweek), cfg.weekly_amplitude)

    noise = _ar1(rng, n, cfg.ar1, cfg.sigma) if cfg.sigma > 0 else np.zeros(n)
    starts = rng.random(n) < cfg.spike_prob
    spikes = np.zeros(n)
    for i in np.flatnonzero(starts):
        magnitude = max(0.0, rng.normal(cfg.spike_mean_kw, cfg.spike_std_kw))
        spikes[i:i + cfg.spike_duration] += magnitude
    load = np.maximum(shape + noise + spikes, 0.0)

    clouds = rng.uniform(cfg.pv_cloud_min, 1.0, cfg.days).repeat(STEPS_PER_DAY)
    daylight = np.clip(np.sin(np.pi * (hours - 6.0) / 12.0), 0.0, None)
    pv = cfg.pv_peak_kw * daylight * clouds
    wt = np.clip(cfg.wt_mean_kw + _ar1(rng, n, cfg.wt_ar1, cfg.wt_sigma), 0.0, cfg.wt_max_kw)

    active = np.convolve(starts.astype(float), np.ones(cfg.spike_duration))[:n] > 0
    labels = [EXTREME if active[d * STEPS_PER_DAY:(d + 1) * STEPS_PER_DAY].any() else TYPICAL
              for d in range(cfg.days)]
    frame = pd.DataFrame({"timestamp": ts, "load_kw": load, "pv_kw": pv, "wt_kw": wt})
    log.info("Generated %d days (%d extreme, %d spike events)", cfg.days,
             labels.count(EXTREME), int(starts.sum()))
    return DaySet(frame, labels, starts)


def label_days(load: np.ndarray, quantile: float = 0.95) -> list[str]:
    """Extreme when the day's largest step-to-step ramp exceeds the quantile of
    the daily largest ramps over the dataset."""
    load = np.asarray(load, dtype=float)
    if load.size % STEPS_PER_DAY:
        raise DimensionError(f"{load.size} values is not a whole number of days")
    ramps = np.abs(np.diff(load, prepend=load[:1]))
    per_day = ramps.reshape(-1, STEPS_PER_DAY).max(axis=1)
    threshold = np.quantile(per_day, quantile)
    return [EXTREME if r > threshold else TYPICAL for r in per_day]


# ----------------------------------------------------------------------
# CSV
# ----------------------------------------------------------------------

def load_csv(path) -> pd.DataFrame:
    """Parse and validate a `timestamp,load_kw[,pv_kw,wt_kw]` trace."""
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    missing = [c for c in ("timestamp", "load_kw") if c not in frame.columns]
    if missing:
        raise ConfigError(f"{path}: missing column(s) {missing}")
    frame["timestamp"] = pd.to_datetime(frame["timestamp"])
    for col in ("pv_kw", "wt_kw"):
        if col not in frame.columns:
            frame[col] = 0.0
    frame = frame[list(COLUMNS)]
    if frame[list(COLUMNS[1:])].isna().any().any():
        raise ConfigError(f"{path}: missing values")

    steps = frame["timestamp"].diff().iloc[1:]
    back = np.flatnonzero((steps <= pd.Timedelta(0)).to_numpy())
    if back.size:
        raise ConfigError(f"{path}: timestamps not monotone at {frame['timestamp'].iloc[back[0] + 1]}")
    gaps = np.flatnonzero((steps != STEP).to_numpy())
    if gaps.size:
        raise ConfigError(f"{path}: gap after {frame['timestamp'].iloc[gaps[0]]}")
    if (frame["load_kw"] < 0).any():
        raise ConfigError(f"{path}: negative load")
    return frame.reset_index(drop=True)


def write_csv(frame: pd.DataFrame, path) -> None:
    frame.to_csv(path, index=False, columns=list(COLUMNS))


def write_dayset(ds: DaySet, out_dir, manifest: dict | None = None) -> list[Path]:
    """Write day files, labels and the manifest; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(ds.days):
        p = out / f"day_{i:03d}.csv"
        write_csv(ds.day(i), p)
        paths.append(p)
    labels = pd.DataFrame({"day": range(ds.days), "label": ds.labels,
                           "date": [str(ds.day(i)["timestamp"].iloc[0].date()) for i in range(ds.days)]})
    labels.to_csv(out / "days.csv", index=False)
    paths.append(out / "days.csv")
    doc = dict(manifest or {})
    doc["files"] = [p.name for p in paths]
    write_json(out / "manifest.json", doc)
    paths.append(out / "manifest.json")
    log.info("Wrote %d day files to %s", ds.days, out)
    return paths


def read_dayset(path) -> DaySet:
    """A dataset directory, or a single multi-day CSV trace."""
    path = Path(path)
    if path.is_file():
        frame = load_csv(path)
        return DaySet(frame, label_days(frame["load_kw"].to_numpy()))
    files = sorted(path.glob("day_*.csv"))
    if not files:
        raise ConfigError(f"no day files in {path}")
    frame = pd.concat([load_csv(f) for f in files], ignore_index=True)
    # revalidate spacing across day boundaries
    steps = frame["timestamp"].diff().iloc[1:]
    if (steps != STEP).any():
        raise ConfigError(f"{path}: day files are not consecutive")
    labels_file = path / "days.csv"
    if labels_file.exists():
        labels = pd.read_csv(labels_file)["label"].astype(str).tolist()
    else:
        labels = label_days(frame["load_kw"].to_numpy())
    return DaySet(frame, labels)


# ----------------------------------------------------------------------
# Forecast windows
# ----------------------------------------------------------------------

def window_at(load: np.ndarray, timestamps: pd.DatetimeIndex, origin: int, n_lags: int,
              horizon: int, with_target: bool = True) -> FeatureWindow:
    """Window whose first target step is `origin`."""
    if origin < n_lags:
        raise DimensionError(f"origin {origin} has fewer than {n_lags} lags before it")
    if origin >= len(timestamps):
        raise DimensionError(f"origin {origin} beyond the end of the trace")
    target = None
    if with_target:
        if origin + horizon > len(load):
            raise DimensionError(f"target [{origin}, {origin + horizon}) runs past the trace")
        target = load[origin:origin + horizon]
    ts = timestamps[origin]
    return FeatureWindow(lags=load[origin - n_lags:origin], hour=ts.hour + ts.minute / 60.0,
                         dow=ts.dayofweek, target=target, origin=origin)


def make_windows(ds: DaySet, n_lags: int, horizon: int, stride: int = 16,
                 first_day: int = 0, last_day: int | None = None) -> list[FeatureWindow]:
    """Windows with targets inside days [first_day, last_day)."""
    last_day = ds.days if last_day is None else last_day
    load, ts = ds.load, ds.timestamps
    lo = max(first_day * STEPS_PER_DAY, n_lags)
    hi = last_day * STEPS_PER_DAY - horizon
    windows = [window_at(load, ts, o, n_lags, horizon) for o in range(lo, hi + 1, stride)]
    if not windows:
        log.warning("No complete windows in days [%d, %d)", first_day, last_day)
    return windows
