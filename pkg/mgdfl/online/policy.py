"""
mgdfl Dispatch Policy - Abstract base class for re-solve strategies.

A policy decides, at every step after the initial solve, whether the
remaining-horizon robust dispatch is re-solved. The simulator computes
the trigger indicators for every policy and hands them over as a
TriggerInputs record; policies only read them.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from mgdfl.online.world import DayState


@dataclass
class TriggerInputs:
    """Indicators available at step t."""
    t: int
    dtau: int
    psi_g: float
    psi_c: float
    psi: float
    chi: int


class DispatchPolicy(ABC):
    """Base class for FRO / RTRO / STATIC."""

    name = ""

    @abstractmethod
    def should_resolve(self, state: DayState, inputs: TriggerInputs) -> bool:
        """True when the remaining horizon is re-optimized at step inputs.t."""

    def describe(self) -> dict[str, object]:
        return {"policy": self.name}
