"""
mgdfl Training - Decision-focused training of the quantile forecaster.

Per batch:

  1. forecast the batch, compute the sample losses zeta_n and the
     forecasting loss (1 - beta) mean(zeta) + beta CVaR(zeta; xi)
  2. for every sample (concurrently) turn the forecast into a prediction
     interval, coarsen it to the surrogate resolution, evaluate the regret
     of the surrogate decision against the oracle and back-propagate
     through the surrogate KKT system to get dL_reg/dD-hat
  3. chain dL_reg/dD-hat into the network by adding lambda * sum(q * G)
     to the autograd graph, where G holds the (constant) per-quantile
     gradients
  4. one Adam step on theta and xi

Samples whose surrogate or oracle solve fails are dropped from the regret
term only; the count is logged and reported in the loss curve.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import torch

from mgdfl.config import RunConfig
from mgdfl.data import STEPS_PER_DAY, DaySet, EXTREME, TYPICAL, make_windows, window_at
from mgdfl.diffopt import regret_gradient
from mgdfl.errors import ConfigError, InfeasibleError, NumericalError
from mgdfl.forecast import (
    DAY_STEPS, DTYPE, FeatureWindow, QuantileForecast, QuantileNet, TrainConfig,
    forecast_loss, interval_levels, level_index, predict, sample_loss, stack_targets,
    stack_windows, to_interval,
)
from mgdfl.metrics import metrics, tail_pinball
from mgdfl.objects import ForecastDescription, Microgrid, RenewableProfile
from mgdfl.protocol import make_curve_row
from mgdfl.surrogate import evaluate_regret, regret_loss, regret_loss_grad

log = logging.getLogger(__name__)


@dataclass
class TrainingSample:
    """A feature window plus the surrogate-resolution decision context."""
    window: FeatureWindow
    mg: Microgrid
    realized: np.ndarray


@dataclass
class LossBreakdown:
    forecast: float
    regret: float
    total: float
    dropped: int = 0
    deltas: list[float] = field(default_factory=list)


@dataclass
class TrainResult:
    model: QuantileNet
    curve: list[dict[str, float]]
    seconds: float = 0.0


def _block_mean(values: np.ndarray, stride: int) -> np.ndarray:
    return np.asarray(values, dtype=float).reshape(-1, stride).mean(axis=1)


# ----------------------------------------------------------------------
# Samples and model
# ----------------------------------------------------------------------

def build_samples(ds: DaySet, run: RunConfig, first_day: int = 0,
                  last_day: int | None = None, horizon: int = DAY_STEPS) -> list[TrainingSample]:
    """Training samples with targets inside days [first_day, last_day)."""
    tc = run.train
    stride = tc.surrogate_stride
    if horizon % stride:
        raise ConfigError(f"surrogate_stride {stride} does not divide the horizon {horizon}")
    network = run.build_network() if tc.surrogate_network else None
    frame = ds.frame
    wt, pv = frame["wt_kw"].to_numpy(dtype=float), frame["pv_kw"].to_numpy(dtype=float)
    out = []
    for w in make_windows(ds, tc.n_lags, horizon, tc.origin_stride, first_day, last_day):
        o = w.origin
        res = RenewableProfile(p_wt=wt[o:o + horizon], p_pv=pv[o:o + horizon])
        mg = run.build_microgrid(res, start_step=o % STEPS_PER_DAY, network=network)
        out.append(TrainingSample(w, mg.coarsen(stride), _block_mean(w.target, stride)))
    log.info("Built %d training samples from days [%d, %s)", len(out), first_day,
             ds.days if last_day is None else last_day)
    return out


def build_model(tc: TrainConfig, loads=None, horizon: int = DAY_STEPS) -> QuantileNet:
    """Fresh, seeded network; `loads` fits the input scale."""
    torch.manual_seed(tc.seed)
    model = QuantileNet(n_lags=tc.n_lags, horizon=horizon, quantiles=tc.quantiles,
                        hidden=tc.hidden)
    if loads is not None:
        model.fit_scale(loads)
    return model


# ----------------------------------------------------------------------
# Regret term
# ----------------------------------------------------------------------

def _describe(q: np.ndarray, quantiles, kappa: float, stride: int) -> ForecastDescription:
    pi = to_interval(QuantileForecast(q, quantiles), kappa)
    return ForecastDescription(lower=_block_mean(pi.lower, stride),
                               median=_block_mean(pi.median, stride),
                               upper=_block_mean(pi.upper, stride))


def _sample_regret(q: np.ndarray, sample: TrainingSample, tc: TrainConfig):
    """(delta, dDelta/dD-hat at surrogate resolution) or None when a solve fails."""
    try:
        d = _describe(q, tc.quantiles, tc.kappa, tc.surrogate_stride)
        ev = evaluate_regret(d, sample.realized, sample.mg, rho=tc.rho)
        return ev.delta, regret_gradient(ev)
    except (InfeasibleError, NumericalError) as exc:
        log.debug("Sample at origin %d dropped: %s", sample.window.origin, exc)
        return None


def regret_term(q: torch.Tensor, samples: list[TrainingSample],
                tc: TrainConfig) -> tuple[list[float], torch.Tensor, int]:
    """Regrets, dL_reg/dq (B, T, M) and the number of dropped samples."""
    qs = q.detach().numpy()
    if tc.workers > 1:
        with ThreadPoolExecutor(max_workers=tc.workers) as pool:
            results = list(pool.map(lambda i: _sample_regret(qs[i], samples[i], tc),
                                    range(len(samples))))
    else:
        results = [_sample_regret(qs[i], s, tc) for i, s in enumerate(samples)]

    kept = [i for i, r in enumerate(results) if r is not None]
    dropped = len(samples) - len(kept)
    if dropped:
        log.warning("Dropped %d of %d samples from the regret term", dropped, len(samples))

    deltas = [results[i][0] for i in kept]
    weights = regret_loss_grad(deltas)
    stride = tc.surrogate_stride
    cols = [level_index(tc.quantiles, a) for a in interval_levels(tc.kappa)]
    grad = np.zeros_like(qs)
    for w, i in zip(weights, kept):
        g = results[i][1].reshape(3, -1)
        fine = np.repeat(g / stride, stride, axis=1)
        for row, c in enumerate(cols):
            grad[i, :, c] += w * fine[row]
    return deltas, torch.as_tensor(grad, dtype=DTYPE), dropped


# ----------------------------------------------------------------------
# Loss and gradient
# ----------------------------------------------------------------------

def _init_xi(model: QuantileNet, zetas: torch.Tensor, alpha_c: float) -> None:
    with torch.no_grad():
        model.xi.fill_(torch.quantile(zetas.detach(), alpha_c))
        model.xi_ready.fill_(True)


def total_loss_and_grad(model: QuantileNet, samples: list[TrainingSample],
                        tc: TrainConfig) -> LossBreakdown:
    """L_total = L_forecast + lambda L_reg; gradients land in .grad of theta and xi."""
    tc = tc.effective()
    lags, cal = stack_windows([s.window for s in samples])
    target = stack_targets([s.window for s in samples])
    q = model(lags, cal)
    zetas = sample_loss(q, target, tc.quantiles)
    if tc.beta > 0 and not bool(model.xi_ready):
        _init_xi(model, zetas, tc.alpha_c)
    l_fc = forecast_loss(zetas, model.xi, tc)

    graph = l_fc
    l_reg, deltas, dropped = 0.0, [], 0
    if tc.lam > 0:
        deltas, grad_q, dropped = regret_term(q, samples, tc)
        l_reg = regret_loss(deltas)
        graph = graph + tc.lam * (q * grad_q).sum()

    total = float(l_fc.detach()) + tc.lam * l_reg
    if not np.isfinite(total):
        raise NumericalError(f"non-finite loss (forecast={float(l_fc):.4g}, regret={l_reg:.4g})")
    model.zero_grad(set_to_none=False)
    graph.backward()
    return LossBreakdown(forecast=float(l_fc.detach()), regret=l_reg, total=total,
                         dropped=dropped, deltas=deltas)


# ----------------------------------------------------------------------
# Training loop
# ----------------------------------------------------------------------

def _optimizer(model: QuantileNet, tc: TrainConfig) -> torch.optim.Adam:
    theta = [p for _, p in model.theta()]
    return torch.optim.Adam([{"params": theta, "lr": tc.lr},
                             {"params": [model.xi], "lr": tc.xi_lr}])


def train(model: QuantileNet, samples: list[TrainingSample], tc: TrainConfig,
          history: list[dict[str, float]] | None = None) -> TrainResult:
    """Run tc.epochs epochs of seeded mini-batch Adam.

    `history` is the curve of a resumed run; epochs continue its numbering.
    """
    curve = list(history or [])
    if tc.epochs == 0:
        return TrainResult(model, curve)
    if not samples:
        raise ConfigError("no training samples")
    started = time.perf_counter()
    opt = _optimizer(model, tc)
    first = len(curve) + 1
    beta, lam = tc.weights
    log.info("Training %s (beta=%.2f lambda=%.2f) on %d samples for %d epochs",
             tc.mode, beta, lam, len(samples), tc.epochs)

    for epoch in range(first, first + tc.epochs):
        rng = np.random.default_rng([tc.seed, epoch])
        order = rng.permutation(len(samples))
        sums = np.zeros(3)
        dropped = 0
        batches = 0
        for b in range(0, len(order), tc.batch_size):
            batch = [samples[i] for i in order[b:b + tc.batch_size]]
            parts = total_loss_and_grad(model, batch, tc)
            opt.step()
            sums += (parts.forecast, parts.regret, parts.total)
            dropped += parts.dropped
            batches += 1
        fc, reg, tot = sums / batches
        curve.append(make_curve_row(epoch, fc, reg, tot, float(model.xi), dropped))
        log.info("Epoch %d: forecast=%.4f regret=%.4f total=%.4f xi=%.4f dropped=%d",
                 epoch, fc, reg, tot, float(model.xi), dropped)

    return TrainResult(model, curve, time.perf_counter() - started)


def rolling_models(ds: DaySet, run: RunConfig, target_days) -> dict[int, QuantileNet]:
    """One model per target day, trained on the previous train.rolling_days days."""
    tc = run.train
    models = {}
    for day in target_days:
        first = day - tc.rolling_days
        if first < 0:
            raise ConfigError(f"day {day} has fewer than {tc.rolling_days} days of history")
        samples = build_samples(ds, run, first, day)
        loads = ds.load[first * STEPS_PER_DAY:day * STEPS_PER_DAY]
        log.info("Rolling retrain for day %d on days [%d, %d)", day, first, day)
        models[day] = train(build_model(tc, loads), samples, tc).model
    return models


# ----------------------------------------------------------------------
# Held-out report
# ----------------------------------------------------------------------

def forecast_report(model: QuantileNet, ds: DaySet, days, kappa: float = 0.9) -> dict:
    """Day-ahead forecast metrics per subset (all / typical / extreme)."""
    report = {}
    load, ts = ds.load, ds.timestamps
    for name, label in (("all", None), (TYPICAL, TYPICAL), (EXTREME, EXTREME)):
        chosen = [d for d in days if label is None or ds.labels[d] == label]
        windows = [window_at(load, ts, d * STEPS_PER_DAY, model.n_lags, model.horizon)
                   for d in chosen if d * STEPS_PER_DAY >= model.n_lags]
        if not windows:
            report[name] = {"days": 0}
            continue
        forecasts = predict(model, windows)
        realized = np.stack([w.target for w in windows])
        q = np.stack([f.q for f in forecasts])
        entry = metrics(q, realized, model.quantiles, kappa)
        zetas = sample_loss(q, realized, model.quantiles).numpy()
        entry.update(days=len(windows), tail_pinball=tail_pinball(zetas, 0.05))
        report[name] = entry
    return report
