"""
mgdfl Forecast - Multi-quantile load forecaster and its losses.

The network maps a window of lagged load plus calendar features to M
quantile trajectories over the next T steps:

  trunk   two smooth hidden layers shared by every output
  median  base head, added to the same-time-yesterday lags when the window
          covers a full day
  others  softplus increments stacked outwards from the median, so the
          quantiles never cross

Losses follow the usual pinball / Rockafellar-Uryasev construction:

  zeta_n           mean pinball over steps and levels for sample n
  cvar(zeta, xi)   xi + sum((zeta - xi)+) / ((1 - alpha_c) |B|)
  forecast loss    (1 - beta) mean(zeta) + beta cvar(zeta, xi)

Everything runs in float64 on the CPU.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from mgdfl.errors import ConfigError, DimensionError, NumericalError
from mgdfl.objects import ForecastDescription, UncertaintySet

log = logging.getLogger(__name__)

DEFAULT_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
DAY_STEPS = 96
CALENDAR_FEATURES = 9
DTYPE = torch.float64

_LEVEL_TOL = 1e-9


# ----------------------------------------------------------------------
# Inputs and outputs
# ----------------------------------------------------------------------

@dataclass
class FeatureWindow:
    """Lagged load and calendar labels for one forecast origin.

    `hour` and `dow` describe the first target step; `target` is the
    realized load over the horizon (training and evaluation only).
    """
    lags: np.ndarray
    hour: float
    dow: int
    target: np.ndarray | None = None
    origin: int = 0

    def __post_init__(self):
        self.lags = np.asarray(self.lags, dtype=float).ravel()
        if self.lags.size == 0 or not np.all(np.isfinite(self.lags)):
            raise ConfigError("feature window needs finite lagged load values")
        if not 0 <= self.hour < 24:
            raise ConfigError(f"hour must be in [0, 24), got {self.hour!r}")
        if int(self.dow) != self.dow or not 0 <= self.dow <= 6:
            raise ConfigError(f"dow must be 0..6, got {self.dow!r}")
        self.dow = int(self.dow)
        if self.target is not None:
            self.target = np.asarray(self.target, dtype=float).ravel()
            if not np.all(np.isfinite(self.target)):
                raise ConfigError("feature window target has missing values")

    def calendar(self) -> np.ndarray:
        angle = 2.0 * math.pi * self.hour / 24.0
        onehot = np.zeros(7)
        onehot[self.dow] = 1.0
        return np.concatenate([[math.sin(angle), math.cos(angle)], onehot])


def stack_windows(windows: list[FeatureWindow]) -> tuple[torch.Tensor, torch.Tensor]:
    """(lags, calendar) tensors for a batch of windows."""
    if not windows:
        raise DimensionError("empty batch")
    lags = torch.as_tensor(np.stack([w.lags for w in windows]), dtype=DTYPE)
    cal = torch.as_tensor(np.stack([w.calendar() for w in windows]), dtype=DTYPE)
    return lags, cal


def stack_targets(windows: list[FeatureWindow]) -> torch.Tensor:
    if any(w.target is None for w in windows):
        raise ConfigError("batch contains windows without targets")
    return torch.as_tensor(np.stack([w.target for w in windows]), dtype=DTYPE)


@dataclass
class QuantileForecast:
    """T x M quantile trajectories (kW) at the given levels."""
    q: np.ndarray
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.quantiles = tuple(float(a) for a in self.quantiles)
        if self.q.ndim != 2 or self.q.shape[1] != len(self.quantiles):
            raise DimensionError(f"quantile matrix {self.q.shape} does not match "
                                 f"{len(self.quantiles)} levels")
        if np.any(np.diff(self.q, axis=1) < -1e-9):
            raise NumericalError("quantile forecast crosses")

    @property
    def horizon(self) -> int:
        return self.q.shape[0]

    def level(self, alpha: float) -> np.ndarray:
        return self.q[:, level_index(self.quantiles, alpha)]

    def window(self, start: int, stop: int) -> QuantileForecast:
        return QuantileForecast(self.q[start:stop], self.quantiles)


@dataclass
class PredictionInterval:
    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    kappa: float = 0.9

    @property
    def horizon(self) -> int:
        return len(self.median)

    def uncertainty_set(self) -> UncertaintySet:
        return UncertaintySet(lower=self.lower, upper=self.upper, nominal=self.median)

    def description(self) -> ForecastDescription:
        return ForecastDescription(lower=self.lower, median=self.median, upper=self.upper)


def level_index(quantiles, alpha: float) -> int:
    for i, a in enumerate(quantiles):
        if abs(a - alpha) <= _LEVEL_TOL:
            return i
    raise ConfigError(f"missing quantile level {alpha:.2f}")


def interval_levels(kappa: float) -> tuple[float, float, float]:
    if not 0 < kappa < 1:
        raise ConfigError(f"kappa must be in (0, 1), got {kappa!r}")
    return (1.0 - kappa) / 2.0, 0.5, (1.0 + kappa) / 2.0


def to_interval(f: QuantileForecast, kappa: float = 0.9) -> PredictionInterval:
    """Central prediction interval at confidence kappa plus the median."""
    lo, mid, hi = interval_levels(kappa)
    return PredictionInterval(lower=f.level(lo).copy(), median=f.level(mid).copy(),
                              upper=f.level(hi).copy(), kappa=kappa)


# ----------------------------------------------------------------------
# Network
# ----------------------------------------------------------------------

class QuantileNet(nn.Module):
    """Shared trunk with a median head and monotone increment heads."""

    def __init__(self, n_lags: int = DAY_STEPS, horizon: int = DAY_STEPS,
                 quantiles=DEFAULT_QUANTILES, hidden: int = 64,
                 day_steps: int = DAY_STEPS, load_scale: float = 1000.0):
        super().__init__()
        quantiles = tuple(float(a) for a in quantiles)
        if list(quantiles) != sorted(set(quantiles)) or not all(0 < a < 1 for a in quantiles):
            raise ConfigError(f"quantile levels must be distinct, sorted and in (0, 1): {quantiles!r}")
        self.quantiles = quantiles
        self.median_index = level_index(quantiles, 0.5)
        if n_lags < 1 or horizon < 1 or hidden < 1:
            raise ConfigError("n_lags, horizon and hidden must be >= 1")
        self.n_lags = n_lags
        self.horizon = horizon
        self.hidden = hidden
        self.day_steps = day_steps
        # residual on yesterday's load needs a day of lags covering the horizon
        self.residual = n_lags >= day_steps and horizon <= day_steps

        self.trunk = nn.Sequential(
            nn.Linear(n_lags + CALENDAR_FEATURES, hidden), nn.SiLU(),
            nn.Linear(hidden, hidden), nn.SiLU(),
        )
        self.median_head = nn.Linear(hidden, horizon)
        self.increment_head = nn.Linear(hidden, horizon * (len(quantiles) - 1))
        self.xi = nn.Parameter(torch.zeros((), dtype=DTYPE))
        self.register_buffer("load_scale", torch.tensor(float(load_scale), dtype=DTYPE))
        self.register_buffer("xi_ready", torch.tensor(False))
        self.to(DTYPE)

    @property
    def arch(self) -> dict[str, object]:
        return {"n_lags": self.n_lags, "horizon": self.horizon, "hidden": self.hidden,
                "day_steps": self.day_steps, "quantiles": list(self.quantiles)}

    def theta(self) -> list[tuple[str, nn.Parameter]]:
        """Forecasting parameters (everything except xi)."""
        return [(n, p) for n, p in self.named_parameters() if n != "xi"]

    def fit_scale(self, loads) -> None:
        scale = float(np.mean(np.abs(np.asarray(loads, dtype=float))))
        if not np.isfinite(scale) or scale <= 0:
            raise ConfigError("cannot fit a load scale to empty or zero data")
        self.load_scale.fill_(scale)

    def forward(self, lags: torch.Tensor, calendar: torch.Tensor) -> torch.Tensor:
        """(B, L) kW lags and (B, 9) calendar -> (B, T, M) quantiles in kW."""
        if lags.shape[-1] != self.n_lags:
            raise DimensionError(f"expected {self.n_lags} lags, got {lags.shape[-1]}")
        scale = self.load_scale
        x = lags / scale
        h = self.trunk(torch.cat([x, calendar], dim=-1))
        median = self.median_head(h)
        if self.residual:
            start = self.n_lags - self.day_steps
            median = median + x[:, start:start + self.horizon]

        k = self.median_index
        inc = F.softplus(self.increment_head(h)).reshape(-1, len(self.quantiles) - 1, self.horizon)
        below = median.unsqueeze(1) - torch.cumsum(inc[:, :k], dim=1)
        above = median.unsqueeze(1) + torch.cumsum(inc[:, k:], dim=1)
        q = torch.cat([below.flip(1), median.unsqueeze(1), above], dim=1)
        return scale * q.transpose(1, 2)


def predict(model: QuantileNet, features: FeatureWindow | list[FeatureWindow]):
    """QuantileForecast for one window, or a list of them for a batch."""
    single = isinstance(features, FeatureWindow)
    windows = [features] if single else list(features)
    with torch.no_grad():
        q = model(*stack_windows(windows)).numpy()
    out = [QuantileForecast(qi, model.quantiles) for qi in q]
    return out[0] if single else out


# ----------------------------------------------------------------------
# Losses
# ----------------------------------------------------------------------

def _t(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=DTYPE)


def pinball(y, qhat, alpha) -> torch.Tensor:
    """alpha (y - q)+ + (1 - alpha) (q - y)+, elementwise."""
    y, qhat, alpha = _t(y), _t(qhat), _t(alpha)
    return alpha * torch.relu(y - qhat) + (1.0 - alpha) * torch.relu(qhat - y)


def sample_loss(q, realized, quantiles=DEFAULT_QUANTILES) -> torch.Tensor:
    """Mean pinball over steps and levels; (T, M) -> scalar, (B, T, M) -> (B,)."""
    q, realized = _t(q), _t(realized)
    if q.shape[-1] != len(quantiles) or q.shape[:-1] != realized.shape:
        raise DimensionError(f"quantiles {tuple(q.shape)} do not match realized {tuple(realized.shape)}")
    alpha = torch.as_tensor(quantiles, dtype=q.dtype)
    return pinball(realized.unsqueeze(-1), q, alpha).mean(dim=(-2, -1))


def cvar_loss(zetas, xi, alpha_c: float) -> torch.Tensor:
    zetas, xi = _t(zetas), _t(xi)
    if not 0 < alpha_c < 1:
        raise ConfigError(f"alpha_c must be in (0, 1), got {alpha_c!r}")
    return xi + torch.relu(zetas - xi).sum() / ((1.0 - alpha_c) * zetas.numel())


def forecast_loss(zetas, xi, cfg) -> torch.Tensor:
    """(1 - beta) mean(zeta) + beta cvar; cfg supplies beta and alpha_c."""
    beta, alpha_c = cfg.beta, cfg.alpha_c
    zetas = _t(zetas)
    loss = (1.0 - beta) * zetas.mean()
    if beta > 0:
        loss = loss + beta * cvar_loss(zetas, xi, alpha_c)
    return loss


# ----------------------------------------------------------------------
# Training configuration
# ----------------------------------------------------------------------

MODES = ("plain", "cvar", "dfl", "cvar-dfl")


@dataclass
class TrainConfig:
    alpha_c: float = 0.95
    beta: float = 0.5
    lam: float = 1.0
    rho: float = 1e-3
    lr: float = 1e-3
    xi_lr: float = 0.05
    batch_size: int = 16
    epochs: int = 20
    seed: int = 0
    mode: str = "cvar-dfl"
    kappa: float = 0.9
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES
    n_lags: int = DAY_STEPS
    hidden: int = 64
    origin_stride: int = 16
    surrogate_stride: int = 4
    surrogate_network: bool = False
    workers: int = 1
    rolling_days: int = 14
    train_days: int = 21

    def __post_init__(self):
        if not 0 < self.alpha_c < 1:
            raise ConfigError(f"alpha_c must be in (0, 1), got {self.alpha_c!r}")
        if not 0 <= self.beta <= 1:
            raise ConfigError(f"beta must be in [0, 1], got {self.beta!r}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam!r}")
        if self.rho <= 0:
            raise ConfigError(f"rho must be > 0, got {self.rho!r}")
        if self.lr <= 0 or self.xi_lr <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("batch_size", "origin_stride", "surrogate_stride", "workers",
                     "n_lags", "hidden", "rolling_days", "train_days"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)!r}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs!r}")
        self.quantiles = tuple(float(a) for a in self.quantiles)
        for a in interval_levels(self.kappa):
            level_index(self.quantiles, a)

    @property
    def weights(self) -> tuple[float, float]:
        """(beta, lambda) actually used under the training mode."""
        beta = self.beta if self.mode in ("cvar", "cvar-dfl") else 0.0
        lam = self.lam if self.mode in ("dfl", "cvar-dfl") else 0.0
        return beta, lam

    def effective(self) -> TrainConfig:
        beta, lam = self.weights
        return replace(self, beta=beta, lam=lam)
