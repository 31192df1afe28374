"""Keep the initial schedule for the whole day."""

from __future__ import annotations

from mgdfl.online.policy import DispatchPolicy, TriggerInputs
from mgdfl.online.world import DayState


class StaticPolicy(DispatchPolicy):
    name = "static"

    def should_resolve(self, state: DayState, inputs: TriggerInputs) -> bool:
        return False
