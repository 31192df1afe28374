"""Small hand-built microgrids shared by the test modules."""

import numpy as np

from mgdfl.objects import (
    FirstStageSchedule, Microgrid, MicrogridConfig, PriceSchedule, RenewableProfile,
)


def make_microgrid(steps=4, wt=0.0, pv=0.0, ess=True, buy=0.1, sell=0.05,
                   network=None, **config):
    """Microgrid with flat prices; `ess=False` removes the storage."""
    if not ess:
        config.update(p_ess_max=0.0, e_ess_max=0.0, e_init=0.0)
    cfg = MicrogridConfig(horizon_steps=steps, **config)
    prices = PriceSchedule.flat(steps, buy=buy, sell=sell)
    res = RenewableProfile(np.broadcast_to(wt, (steps,)).astype(float),
                           np.broadcast_to(pv, (steps,)).astype(float))
    return Microgrid(cfg, prices, res, network)


def random_microgrid(rng, steps=4, ess=False, **config):
    """ESS-free by default so steps decouple."""
    if not ess:
        config.update(p_ess_max=0.0, e_ess_max=0.0, e_init=0.0)
    cfg = MicrogridConfig(horizon_steps=steps, **config)
    buy = rng.uniform(0.06, 0.18, steps)
    prices = PriceSchedule(buy_da=buy, sell_da=0.5 * buy)
    res = RenewableProfile(p_wt=rng.uniform(0, 800, steps), p_pv=rng.uniform(0, 1000, steps))
    return Microgrid(cfg, prices, res)


def grid_schedule(mg, load):
    """Schedule that balances `load` with grid exchange only (ESS idle)."""
    load = np.asarray(load, dtype=float)
    net = load - mg.renewables.p_wt - mg.renewables.p_pv
    steps = mg.horizon
    return FirstStageSchedule(
        buy=np.maximum(net, 0.0), sell=np.maximum(-net, 0.0),
        ch=np.zeros(steps), dis=np.zeros(steps),
        e_sch=np.full(steps + 1, mg.config.e_init),
    )
