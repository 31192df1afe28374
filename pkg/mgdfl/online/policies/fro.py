"""Full re-optimization: re-solve at every step."""

from __future__ import annotations

from mgdfl.online.policy import DispatchPolicy, TriggerInputs
from mgdfl.online.world import DayState


class FroPolicy(DispatchPolicy):
    name = "fro"

    def should_resolve(self, state: DayState, inputs: TriggerInputs) -> bool:
        return True
