"""
mgdfl errors.

Every failure the CLI can report maps to one of these classes, and each
class carries the process exit code the CLI uses for it:

  0  ok
  1  ConfigError / DimensionError  (bad config, data or arguments)
  2  InfeasibleError               (an optimization program has no feasible point)
  3  NumericalError                (stall, singular system, NaN loss)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2
EXIT_NUMERICAL = 3


class MgdflError(Exception):
    """Base class for all mgdfl errors."""
    exit_code = EXIT_CONFIG


class ConfigError(MgdflError, ValueError):
    """Invalid configuration, input data or arguments."""
    exit_code = EXIT_CONFIG


class DimensionError(MgdflError, ValueError):
    """Array lengths do not match the horizon they are used with."""
    exit_code = EXIT_CONFIG


class InfeasibleError(MgdflError):
    """An optimization program has no feasible point."""
    exit_code = EXIT_INFEASIBLE


class NumericalError(MgdflError):
    """Solver stall, singular linear system, or a non-finite loss."""
    exit_code = EXIT_NUMERICAL


@dataclass
class RecourseDiagnostic:
    """Where a recourse problem runs out of flexibility.

    direction is "shortage" when load exceeds what upward resources can
    cover and "surplus" when downward resources cannot absorb the excess.
    """
    constraint: str
    step: int
    direction: str
    shortfall_kw: float
    binding: list[str] = field(default_factory=list)

    def describe(self) -> str:
        text = (f"{self.constraint} {self.direction} of {self.shortfall_kw:.3f} kW "
                f"at step {self.step}")
        if self.binding:
            text += f" (binding: {', '.join(self.binding)})"
        return text

    def to_dict(self) -> dict[str, Any]:
        return {
            "constraint": self.constraint,
            "step": self.step,
            "direction": self.direction,
            "shortfall_kw": self.shortfall_kw,
            "binding": list(self.binding),
        }


class RecourseInfeasibleError(InfeasibleError):
    """Recourse cannot restore feasibility for some load realization."""

    def __init__(self, diagnostic: RecourseDiagnostic | None, message: str = ""):
        self.diagnostic = diagnostic
        if not message:
            message = ("recourse infeasible: " + diagnostic.describe()
                       if diagnostic is not None else "recourse infeasible")
        super().__init__(message)


def exit_code_for(exc: BaseException) -> int:
    """Return the CLI exit code for an exception."""
    if isinstance(exc, MgdflError):
        return exc.exit_code
    if isinstance(exc, (ValueError, KeyError)):
        return EXIT_CONFIG
    return EXIT_NUMERICAL
