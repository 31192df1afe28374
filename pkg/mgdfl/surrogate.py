"""
mgdfl Surrogate - Regularized robust dispatch used during training.

The surrogate replaces the inner max of the robust dispatch by an epigraph
over three fixed scenarios taken from the forecast description D-hat
(lower, median, upper):

    min  day_ahead(x) + eta + rho/2 ||z||^2
    s.t. eta >= recourse_cost(y_s)       for s in {lower, median, upper}
         y_s feasible for x under load D-hat_s
         x balances D-hat_median nominally

z stacks the first stage x, the three recourse blocks and eta. D-hat only
enters the right-hand sides (balance, nominal balance and DLC rows), so the
program is a strongly convex QP whose data is affine in D-hat.

The oracle is the same program built at (D, D, D) for the realized load D,
without the nominal balance rows.
Regret fixes the surrogate's first stage, re-solves the rest under D and
compares with the oracle.

Quantities inside the program are in MW/MWh (SCALE = 1000); D-hat is in kW.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from mgdfl.errors import ConfigError, DimensionError, InfeasibleError
from mgdfl.formulation import (
    FirstStageBlock, ProblemBuilder, RecourseBlock, add_epigraph, add_first_stage, add_nominal,
    add_recourse, day_ahead_coefficients, load_param, schedule_from,
)
from mgdfl.objects import FirstStageSchedule, ForecastDescription, LoadTrajectory, Microgrid
from mgdfl.qp import DEFAULT_TOL, FixMap, KktPoint, QpProblem, fix_variables, solve_qp

log = logging.getLogger(__name__)

SCALE = 1000.0
DEFAULT_RHO = 1e-3
SCENARIOS = ("lower", "median", "upper")


@dataclass
class SurrogateProgram:
    """A built surrogate together with the position of its blocks in z."""
    problem: QpProblem
    first_stage: FirstStageBlock
    recourse: list[RecourseBlock]
    eta: np.ndarray
    scale: float = SCALE

    @property
    def first_stage_index(self) -> np.ndarray:
        return self.first_stage.all_index()


@dataclass
class SurrogateSolution:
    z: np.ndarray
    kkt: KktPoint
    problem: QpProblem
    objective: float
    program: SurrogateProgram

    @property
    def first_stage(self) -> np.ndarray:
        """First-stage values in program units (MW, MWh)."""
        return self.z[self.program.first_stage_index]

    @property
    def schedule(self) -> FirstStageSchedule:
        return schedule_from(self.z, self.program.first_stage, self.program.scale)

    @property
    def eta(self) -> float:
        return float(self.z[self.program.eta[0]])

    def scenario_costs(self) -> np.ndarray:
        """Recourse cost ($) of each scenario block."""
        return np.array([float(rb.cost.value(self.z)[0]) for rb in self.program.recourse])


def _description(d) -> ForecastDescription:
    if isinstance(d, ForecastDescription):
        return d
    return ForecastDescription.from_vector(d)


def _realized(load) -> np.ndarray:
    return np.asarray(load.values if isinstance(load, LoadTrajectory) else load, dtype=float)


def assemble_surrogate(d, mg: Microgrid, rho: float = DEFAULT_RHO, scale: float = SCALE,
                       nominal: bool = True) -> SurrogateProgram:
    """Build the surrogate and keep the block layout.

    With `nominal` the schedule must balance the median on its own; the
    oracle side is built without it so every surrogate first stage stays
    feasible there.
    """
    d = _description(d)
    if rho <= 0:
        raise ConfigError(f"rho must be > 0, got {rho!r}")
    if d.horizon != mg.horizon:
        raise DimensionError(f"forecast covers {d.horizon} steps, microgrid {mg.horizon}")
    steps = mg.horizon
    b = ProblemBuilder(n_params=len(SCENARIOS) * steps)
    fs = add_first_stage(b, mg, scale=scale)
    if nominal:
        add_nominal(b, fs, mg, load_param(steps, steps, scale), scale)
    eta = b.add_var("eta", 1, -np.inf, np.inf)
    b.add_cost(*day_ahead_coefficients(fs, mg, scale))
    b.add_cost(eta, 1.0)
    blocks = []
    for s, name in enumerate(SCENARIOS):
        rb = add_recourse(b, fs, mg, load_param(steps, s * steps, scale), scale=scale,
                          tag=f"y_{name}")
        add_epigraph(b, rb, eta, f"epigraph_{name}")
        blocks.append(rb)
    problem = b.build(d.as_vector(), reg=rho)
    return SurrogateProgram(problem, fs, blocks, eta, scale)


def build_surrogate(d, mg: Microgrid, rho: float = DEFAULT_RHO) -> QpProblem:
    """The surrogate QP for forecast description d (ForecastDescription or 3T vector)."""
    return assemble_surrogate(d, mg, rho).problem


def _solve(program: SurrogateProgram, what: str, tol: float) -> SurrogateSolution:
    kkt = solve_qp(program.problem, tol=tol)
    if kkt.status == "infeasible":
        raise InfeasibleError(f"{what} is infeasible: the load band exceeds what the "
                              "reserve caps can absorb")
    kkt.raise_for_status(what)
    return SurrogateSolution(z=kkt.z, kkt=kkt, problem=program.problem,
                             objective=kkt.objective, program=program)


def solve_surrogate(d, mg: Microgrid, rho: float = DEFAULT_RHO,
                    tol: float = DEFAULT_TOL) -> SurrogateSolution:
    """Forecast-induced decision z-bar(D-hat)."""
    return _solve(assemble_surrogate(d, mg, rho), "surrogate", tol)


def solve_oracle(realized, mg: Microgrid, rho: float = DEFAULT_RHO,
                 tol: float = DEFAULT_TOL) -> SurrogateSolution:
    """Perfect-information decision: the surrogate with every scenario at D."""
    d = ForecastDescription.degenerate(_realized(realized))
    return _solve(assemble_surrogate(d, mg, rho, nominal=False), "oracle", tol)


# ----------------------------------------------------------------------
# Fixed-first-stage evaluation and regret
# ----------------------------------------------------------------------

@dataclass
class FixedEvaluation:
    """f_D of a given first stage: the oracle program with x held fixed."""
    value: float
    kkt: KktPoint
    reduced: QpProblem
    fix: FixMap
    program: SurrogateProgram


def evaluate_fixed(first_stage: np.ndarray, realized, mg: Microgrid,
                   rho: float = DEFAULT_RHO, tol: float = DEFAULT_TOL) -> FixedEvaluation:
    """Fix the first stage (program units) and re-solve recourse under D.

    Raises InfeasibleError when the schedule cannot absorb D within the
    reserve caps.
    """
    d = ForecastDescription.degenerate(_realized(realized))
    program = assemble_surrogate(d, mg, rho, nominal=False)
    idx = program.first_stage_index
    first_stage = np.asarray(first_stage, dtype=float)
    if first_stage.shape != idx.shape:
        raise DimensionError(f"first stage has {first_stage.size} values, expected {idx.size}")
    reduced, _, fix = fix_variables(program.problem, idx, first_stage)
    kkt = solve_qp(reduced, tol=tol)
    if kkt.status == "infeasible":
        raise InfeasibleError("fixed first stage cannot serve the realized load")
    kkt.raise_for_status("fixed-schedule evaluation")
    return FixedEvaluation(value=kkt.objective, kkt=kkt, reduced=reduced, fix=fix, program=program)


def regret_gradient_x(ev: FixedEvaluation) -> np.ndarray:
    """d f_D / d x-bar from the multipliers of the fixed program.

    Rows that only involve x were dropped when fixing; they constrain the
    parameter, not the re-solved part, and do not contribute.
    """
    p = ev.program.problem
    fix = ev.fix
    z = fix.expand(ev.kkt.z)
    idx = fix.fixed
    grad = p.H[idx] @ z + p.g[idx]
    if fix.eq_rows.size:
        grad = grad + p.A_eq[fix.eq_rows][:, idx].T @ ev.kkt.nu
    if fix.in_rows.size:
        grad = grad + p.A_in[fix.in_rows][:, idx].T @ ev.kkt.mu
    return np.asarray(grad).ravel()


@dataclass
class RegretEvaluation:
    delta: float
    surrogate: SurrogateSolution
    oracle: SurrogateSolution
    fixed: FixedEvaluation

    def gradient_x(self) -> np.ndarray:
        return regret_gradient_x(self.fixed)


def evaluate_regret(d, realized, mg: Microgrid, rho: float = DEFAULT_RHO,
                    oracle: SurrogateSolution | None = None,
                    surrogate: SurrogateSolution | None = None,
                    tol: float = DEFAULT_TOL) -> RegretEvaluation:
    """Regret of the forecast-induced decision against the oracle.

    `oracle` may be passed in when it was already solved for this D; it does
    not depend on the forecast.
    """
    sur = surrogate if surrogate is not None else solve_surrogate(d, mg, rho, tol)
    orc = oracle if oracle is not None else solve_oracle(realized, mg, rho, tol)
    fixed = evaluate_fixed(sur.first_stage, realized, mg, rho, tol)
    delta = fixed.value - orc.objective
    if delta < -1e-6 * max(1.0, abs(orc.objective)):
        log.warning("Negative regret %.3g (solver tolerance)", delta)
    return RegretEvaluation(delta=delta, surrogate=sur, oracle=orc, fixed=fixed)


def regret(d, realized, mg: Microgrid, rho: float = DEFAULT_RHO) -> float:
    """Delta f = f_D(fixed x-bar) - f_D(oracle), both with the regularizer."""
    return evaluate_regret(d, realized, mg, rho).delta


def regret_loss(deltas) -> float:
    """Mean softplus of the regrets, stable for large values."""
    deltas = np.atleast_1d(np.asarray(deltas, dtype=float))
    if deltas.size == 0:
        return 0.0
    return float(np.mean(np.logaddexp(0.0, deltas)))


def regret_loss_grad(deltas) -> np.ndarray:
    """d regret_loss / d delta_n."""
    deltas = np.atleast_1d(np.asarray(deltas, dtype=float))
    return expit(deltas) / max(deltas.size, 1)
