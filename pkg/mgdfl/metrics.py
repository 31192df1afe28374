"""
mgdfl Metrics - Forecast quality and tail statistics.

All functions take plain arrays and are invariant to the order of samples:

  rmse        of the median against the realized load
  picp        share of realized values inside [lower, upper]
  crps        (2/M) sum_alpha pinball_alpha, the quantile-average
              approximation (only M quantiles are available)
  pinball_90  mean pinball over the 0.05 and 0.95 levels
  cvar_of     mean of the worst (1 - level) share of a cost series
"""

from __future__ import annotations

import logging
import math

import numpy as np

from mgdfl.errors import ConfigError, DimensionError
from mgdfl.forecast import DEFAULT_QUANTILES, level_index

log = logging.getLogger(__name__)


def _pinball(y: np.ndarray, q: np.ndarray, alpha) -> np.ndarray:
    diff = y - q
    return np.maximum(alpha * diff, (alpha - 1.0) * diff)


def _stack(q, realized, quantiles) -> tuple[np.ndarray, np.ndarray]:
    q = np.asarray([f.q if hasattr(f, "q") else f for f in q] if isinstance(q, list) else q,
                   dtype=float)
    realized = np.asarray(realized, dtype=float)
    if q.ndim == 2:
        q = q[None]
    if realized.ndim == 1:
        realized = realized[None]
    if q.shape[-1] != len(quantiles) or q.shape[:-1] != realized.shape:
        raise DimensionError(f"quantiles {q.shape} do not match realized {realized.shape}")
    return q, realized


def rmse(median, realized) -> float:
    median, realized = np.asarray(median, dtype=float), np.asarray(realized, dtype=float)
    if median.shape != realized.shape:
        raise DimensionError(f"median {median.shape} vs realized {realized.shape}")
    return float(np.sqrt(np.mean((median - realized) ** 2)))


def picp(lower, upper, realized) -> float:
    lower, upper, realized = (np.asarray(a, dtype=float) for a in (lower, upper, realized))
    inside = (realized >= lower) & (realized <= upper)
    return float(inside.mean())


def mean_pinball(q, realized, quantiles=DEFAULT_QUANTILES, levels=None) -> float:
    q, realized = _stack(q, realized, quantiles)
    levels = quantiles if levels is None else levels
    cols = [level_index(quantiles, a) for a in levels]
    losses = [_pinball(realized, q[..., c], a) for c, a in zip(cols, levels)]
    return float(np.mean(losses))


def crps(q, realized, quantiles=DEFAULT_QUANTILES) -> float:
    """Quantile-average CRPS approximation."""
    q, realized = _stack(q, realized, quantiles)
    total = sum(_pinball(realized, q[..., m], a) for m, a in enumerate(quantiles))
    return float(np.mean(2.0 * total / len(quantiles)))


def metrics(q, realized, quantiles=DEFAULT_QUANTILES, kappa: float = 0.9) -> dict[str, float]:
    """RMSE, CRPS, PICP at kappa and the 90% pinball for stacked forecasts."""
    q, realized = _stack(q, realized, quantiles)
    lo, hi = (1.0 - kappa) / 2.0, (1.0 + kappa) / 2.0
    med = q[..., level_index(quantiles, 0.5)]
    return {
        "rmse": rmse(med, realized),
        "crps": crps(q, realized, quantiles),
        "picp": picp(q[..., level_index(quantiles, lo)], q[..., level_index(quantiles, hi)],
                     realized),
        "pinball_90": mean_pinball(q, realized, quantiles, levels=(0.05, 0.95)),
    }


def cvar_of(series, level: float = 0.9) -> float:
    """Mean of the worst ceil((1 - level) n) values."""
    if not 0 <= level < 1:
        raise ConfigError(f"level must be in [0, 1), got {level!r}")
    values = np.sort(np.asarray(series, dtype=float).ravel())[::-1]
    if values.size == 0:
        raise ConfigError("cvar of an empty series")
    k = max(1, math.ceil((1.0 - level) * values.size - 1e-9))
    return float(values[:k].mean())


def tail_pinball(zetas, share: float = 0.05) -> float:
    """Mean of the largest `share` of the per-sample losses."""
    return cvar_of(zetas, 1.0 - share)
