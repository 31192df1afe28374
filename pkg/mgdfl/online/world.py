"""
mgdfl World - State of one operating day.

DayState owns everything that changes while a day is played out:

  - the committed first-stage schedule over the whole day (executed steps
    stay frozen, the remainder is replaced on every re-solve)
  - the forecast median the remainder was built from
  - the actual ESS energy and the step of the last re-solve

All mutations go through DayState methods so that the reference used by
the trigger indicators always matches the committed schedule.
"""

from __future__ import annotations

import logging

import numpy as np

from mgdfl.errors import DimensionError
from mgdfl.objects import FirstStageSchedule, Microgrid

log = logging.getLogger(__name__)


class DayState:
    """Committed schedule, reference median and SOC for one day."""

    def __init__(self, mg: Microgrid):
        self.mg = mg
        steps = mg.horizon
        self.t = 0
        self.t_last = 0
        self.soc = mg.config.e_init
        self.soc_path = [self.soc]
        self.schedule = FirstStageSchedule(
            buy=np.zeros(steps), sell=np.zeros(steps), ch=np.zeros(steps), dis=np.zeros(steps),
            e_sch=np.full(steps + 1, mg.config.e_init))
        self.reference = np.zeros(steps)
        self.committed = False

    @property
    def horizon(self) -> int:
        return self.mg.horizon

    @property
    def remaining(self) -> int:
        return self.horizon - self.t

    # ------------------------------------------------------------------
    # Views
    # ------------------------------------------------------------------

    def remaining_microgrid(self, actual: bool = True) -> Microgrid:
        """Microgrid over [t, T) starting from the actual (or scheduled) SOC."""
        e0 = self.soc if actual else self.schedule.e_sch[self.t]
        return self.mg.window(self.t, self.horizon, e_init=e0)

    def remaining_schedule(self) -> FirstStageSchedule:
        """Committed schedule over [t, T)."""
        return self.schedule.window(self.t)

    def remaining_reference(self) -> np.ndarray:
        return self.reference[self.t:]

    def step_schedule(self) -> FirstStageSchedule:
        """Committed first stage for the current step only."""
        x = self.schedule.window(self.t, self.t + 1)
        x.e_sch = np.array([self.soc, x.e_sch[1]])
        return x

    # ------------------------------------------------------------------
    # Mutations
    # ------------------------------------------------------------------

    def commit(self, x: FirstStageSchedule, median: np.ndarray) -> None:
        """Replace the schedule over [t, T) with x built from `median`."""
        median = np.asarray(median, dtype=float)
        if x.horizon != self.remaining or median.shape[0] != self.remaining:
            raise DimensionError(f"commit covers {x.horizon} steps, {self.remaining} remain")
        t = self.t
        for key in ("buy", "sell", "ch", "dis", "cur_wt_sch", "cur_pv_sch"):
            getattr(self.schedule, key)[t:] = getattr(x, key)
        self.schedule.e_sch[t:] = x.e_sch
        self.reference[t:] = median
        self.t_last = t
        self.committed = True
        log.debug("Committed schedule over [%d, %d)", t, self.horizon)

    def advance(self, soc_next: float) -> None:
        """Close step t with the executed end-of-step energy."""
        self.soc = float(soc_next)
        self.soc_path.append(self.soc)
        self.t += 1

    def executed_schedule(self) -> FirstStageSchedule:
        """First stage as executed over [0, t)."""
        x = self.schedule.window(0, self.t)
        x.e_sch = np.asarray(self.soc_path[:self.t + 1], dtype=float)
        return x
