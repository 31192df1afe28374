"""Risk-triggered re-optimization: re-solve when the trigger rule fires."""

from __future__ import annotations

import logging

from mgdfl.online.policy import DispatchPolicy, TriggerInputs
from mgdfl.online.simulator import RtroConfig, trigger
from mgdfl.online.world import DayState

log = logging.getLogger(__name__)


class RtroPolicy(DispatchPolicy):
    name = "rtro"

    def __init__(self, cfg: RtroConfig | None = None):
        self.cfg = cfg if cfg is not None else RtroConfig()

    def should_resolve(self, state: DayState, inputs: TriggerInputs) -> bool:
        chi = trigger(inputs.psi_g, inputs.psi_c, inputs.dtau, self.cfg)
        if chi:
            log.debug("t=%d: trigger (psi_g=%.3g, psi_c=%.3g, dtau=%d)",
                      inputs.t, inputs.psi_g, inputs.psi_c, inputs.dtau)
        return bool(chi)

    def describe(self) -> dict[str, object]:
        c = self.cfg
        return {"policy": self.name, "eps_g": c.eps_g, "eps_c": c.eps_c,
                "dtau_min": c.dtau_min, "dtau_max": c.dtau_max}
