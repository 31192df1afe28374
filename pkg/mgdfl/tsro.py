"""
mgdfl TSRO - Two-stage robust dispatch over a per-step load box.

    min_x  day_ahead_cost(x) + max_{u in U} min_{y in Y(x, u)} real_time_cost(y)

The outer problem is solved by column-and-constraint generation (CCG):
the master keeps one full recourse copy per pooled scenario, and the inner
max is a search over box vertices. The LP value of the recourse is convex
in u, so the max over the box is attained at a vertex.

All programs here are in kW (scale 1) and solved with HiGHS.
"""

from __future__ import annotations

import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from mgdfl.errors import (
    ConfigError, DimensionError, InfeasibleError, NumericalError, RecourseDiagnostic,
    RecourseInfeasibleError,
)
from mgdfl.formulation import (
    ProblemBuilder, add_epigraph, add_first_stage, add_nominal, add_recourse,
    day_ahead_coefficients, fixed_first_stage, load_param, recourse_cost_coefficients,
    recourse_plan, schedule_from,
)
from mgdfl.model import day_ahead_cost, detect_simultaneity
from mgdfl.objects import (
    KEYS, FirstStageSchedule, LoadTrajectory, Microgrid, RecoursePlan, UncertaintySet,
)
from mgdfl.qp import KktPoint, solve_lp

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITER = 30
POOL_CAP = 25
VERTEX_LIMIT = 12

_IMPROVE = 1e-9


def _values(u) -> np.ndarray:
    return np.asarray(u.values if isinstance(u, LoadTrajectory) else u, dtype=float)


# ----------------------------------------------------------------------
# Second stage
# ----------------------------------------------------------------------

class RecourseProgram:
    """Second-stage LP for a fixed schedule, parameterized by the load u."""

    def __init__(self, x: FirstStageSchedule, mg: Microgrid, emergency: bool = False):
        if x.horizon != mg.horizon:
            raise DimensionError(f"schedule covers {x.horizon} steps, microgrid {mg.horizon}")
        self.x = x
        self.mg = mg
        self.emergency = emergency
        b = ProblemBuilder(n_params=mg.horizon)
        rb = add_recourse(b, fixed_first_stage(x), mg, load_param(mg.horizon, 0),
                          emergency=emergency)
        b.add_cost(*recourse_cost_coefficients(rb))
        self.block = rb
        self.problem = b.build(np.zeros(mg.horizon))

    def solve(self, u) -> KktPoint:
        """Solve at load u; raises RecourseInfeasibleError with a diagnostic."""
        u = _values(u)
        kkt = solve_lp(self.problem.with_params(u))
        if kkt.status == "infeasible":
            raise RecourseInfeasibleError(diagnose_recourse(self.x, u, self.mg, self.emergency))
        kkt.raise_for_status("recourse LP")
        return kkt

    def gradient(self, kkt: KktPoint) -> np.ndarray:
        """Subgradient of the LP value in u, from the multipliers."""
        p = self.problem
        return -(p.P_eq.T @ kkt.nu + p.P_in.T @ kkt.mu)

    def plan(self, kkt: KktPoint) -> RecoursePlan:
        return recourse_plan(kkt.z, self.block)


def second_stage_value(x: FirstStageSchedule, u, mg: Microgrid,
                       emergency: bool = False) -> tuple[float, RecoursePlan]:
    """Optimal real-time cost and recourse for schedule x under load u."""
    prog = RecourseProgram(x, mg, emergency)
    kkt = prog.solve(u)
    return kkt.objective, prog.plan(kkt)


_SHORTAGE_RESOURCES = (("up", "buy"), ("up", "dis"), ("down", "ch"), ("down", "sell"))
_SURPLUS_RESOURCES = (("down", "buy"), ("down", "dis"), ("up", "ch"), ("up", "sell"))


def diagnose_recourse(x: FirstStageSchedule, u, mg: Microgrid,
                      emergency: bool = False) -> RecourseDiagnostic:
    """Locate the largest unmet requirement with an elastic re-solve."""
    u = _values(u)
    steps = mg.horizon
    b = ProblemBuilder(n_params=steps)
    rb = add_recourse(b, fixed_first_stage(x), mg, load_param(steps, 0),
                      emergency=emergency, elastic=True)
    for idx in rb.slack.values():
        b.add_cost(idx, 1.0)
    kkt = solve_lp(b.build(u))
    if not kkt.optimal:
        return RecourseDiagnostic("ess_energy_limit", 0, "shortage", float("nan"),
                                  ["ess energy path cannot follow the schedule"])
    z = kkt.z
    best = ("power_balance", 0, "shortage", 0.0)
    for name, constraint, direction in (("shortage", "power_balance", "shortage"),
                                        ("surplus", "power_balance", "surplus"),
                                        ("v_low", "voltage_limit", "shortage"),
                                        ("v_high", "voltage_limit", "surplus")):
        if name not in rb.slack:
            continue
        vals = z[rb.slack[name]]
        t = int(np.argmax(vals))
        if vals[t] > best[3]:
            best = (constraint, t, direction, float(vals[t]))
    constraint, t, direction, amount = best
    cfg = mg.config
    binding = []
    for side, k in (_SHORTAGE_RESOURCES if direction == "shortage" else _SURPLUS_RESOURCES):
        idx = (rb.up if side == "up" else rb.down)[k][t]
        cap = (cfg.reserve_up if side == "up" else cfg.reserve_down)[k]
        realized = x.power(k)[t] + z[rb.up[k][t]] - z[rb.down[k][t]]
        if z[idx] >= cap - 1e-6 or (side == "up" and realized >= cfg.device_max(k) - 1e-6) \
                or (side == "down" and realized <= 1e-6):
            binding.append(f"reserve_{side}[{k}]")
    if direction == "shortage" and z[rb.dlc[t]] >= cfg.dlc_ratio * u[t] - 1e-6:
        binding.append("dlc_limit")
    if direction == "surplus":
        res = mg.renewables
        if z[rb.cur_wt[t]] + x.cur_wt_sch[t] >= res.p_wt[t] - 1e-6:
            binding.append("curtail_wt_limit")
        if z[rb.cur_pv[t]] + x.cur_pv_sch[t] >= res.p_pv[t] - 1e-6:
            binding.append("curtail_pv_limit")
    return RecourseDiagnostic(constraint, t, direction, amount, binding)


# ----------------------------------------------------------------------
# Inner maximization
# ----------------------------------------------------------------------

class _VertexOracle:
    """Cached recourse values at box vertices."""

    def __init__(self, prog: RecourseProgram, uset: UncertaintySet):
        self.prog = prog
        self.uset = uset
        self._cache: dict[bytes, tuple[float, np.ndarray]] = {}

    def __call__(self, at_upper: np.ndarray) -> tuple[float, np.ndarray]:
        key = np.packbits(at_upper).tobytes()
        if key not in self._cache:
            kkt = self.prog.solve(self.uset.vertex(at_upper))
            self._cache[key] = (kkt.objective, self.prog.gradient(kkt))
        return self._cache[key]

    @property
    def evaluations(self) -> int:
        return len(self._cache)


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _climb(oracle: _VertexOracle, start: np.ndarray, free: np.ndarray,
           workers: int) -> tuple[np.ndarray, float]:
    cur = start.copy()
    val, grad = oracle(cur)
    width = oracle.uset.upper - oracle.uset.lower

    # jump to the vertex maximizing the linearization while it helps
    for _ in range(len(cur)):
        cand = cur.copy()
        cand[free & (grad * width > 0)] = True
        cand[free & (grad * width < 0)] = False
        if np.array_equal(cand, cur):
            break
        v, g = oracle(cand)
        if v <= val + _IMPROVE * (1.0 + abs(val)):
            break
        cur, val, grad = cand, v, g

    # best-improvement single flips
    steps = np.flatnonzero(free)
    while steps.size:
        flips = []
        for t in steps:
            f = cur.copy()
            f[t] = not f[t]
            flips.append(f)
        values = [r[0] for r in _map(oracle, flips, workers)]
        best = int(np.argmax(values))
        if values[best] <= val + _IMPROVE * (1.0 + abs(val)):
            break
        cur, val = flips[best], values[best]
    return cur, val


def worst_case_ascent(x: FirstStageSchedule, uset: UncertaintySet, mg: Microgrid,
                      seed: int = 0, restarts: int = 1, workers: int = 1,
                      program: RecourseProgram | None = None) -> tuple[LoadTrajectory, float]:
    """Local worst-case vertex of the box for schedule x.

    Starts at the upper vertex, follows dual-guided vertex jumps, polishes
    with single-step flips and repeats from `restarts` seeded random vertices.
    """
    prog = program or RecourseProgram(x, mg)
    free = uset.lower != uset.upper
    oracle = _VertexOracle(prog, uset)
    best_u, best_v = _climb(oracle, np.ones(uset.horizon, dtype=bool), free, workers)
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        if not np.any(free):
            break
        start = rng.random(uset.horizon) < 0.5
        u, v = _climb(oracle, start, free, workers)
        if v > best_v + _IMPROVE * (1.0 + abs(best_v)):
            best_u, best_v = u, v
    log.debug("worst-case ascent: %d vertex evaluations, value %.6f", oracle.evaluations, best_v)
    return LoadTrajectory(uset.vertex(best_u)), best_v


def brute_force_worst_case(x: FirstStageSchedule, uset: UncertaintySet, mg: Microgrid,
                           workers: int = 1, program: RecourseProgram | None = None,
                           max_steps: int = VERTEX_LIMIT) -> tuple[LoadTrajectory, float]:
    """Exact maximum over all box vertices."""
    if uset.horizon > max_steps:
        raise ConfigError(f"horizon too long for vertex enumeration: {uset.horizon} > {max_steps}")
    prog = program or RecourseProgram(x, mg)
    oracle = _VertexOracle(prog, uset)
    vertices = _enumerate_vertices(uset)
    values = [r[0] for r in _map(oracle, vertices, workers)]
    best = int(np.argmax(values))
    return LoadTrajectory(uset.vertex(vertices[best])), values[best]


def _enumerate_vertices(uset: UncertaintySet) -> list[np.ndarray]:
    free = np.flatnonzero(uset.lower != uset.upper)
    out = []
    for bits in itertools.product((False, True), repeat=free.size):
        v = np.zeros(uset.horizon, dtype=bool)
        v[free] = bits
        out.append(v)
    return out


# ----------------------------------------------------------------------
# Master and CCG
# ----------------------------------------------------------------------

@dataclass
class TsroSolution:
    """Robust schedule with its worst-case cost and CCG history."""
    x: FirstStageSchedule
    worst_case_cost: float
    scenario_pool: list[LoadTrajectory]
    iterations: int
    gap: float
    day_ahead_cost: float = 0.0
    worst_case: LoadTrajectory | None = None
    lower_bounds: list[float] = field(default_factory=list)
    upper_bounds: list[float] = field(default_factory=list)
    solve_seconds: float = 0.0
    simultaneous: list[tuple[int, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schedule": self.x.to_dict(),
            "worst_case_cost": self.worst_case_cost,
            "day_ahead_cost": self.day_ahead_cost,
            "worst_case": None if self.worst_case is None else self.worst_case.values.tolist(),
            "scenario_pool": [u.values.tolist() for u in self.scenario_pool],
            "iterations": self.iterations,
            "gap": self.gap,
            "lower_bounds": list(self.lower_bounds),
            "upper_bounds": list(self.upper_bounds),
            "simultaneous": [list(s) for s in self.simultaneous],
        }


@dataclass
class _Master:
    x: FirstStageSchedule
    value: float
    epigraph_duals: np.ndarray


def _solve_master(mg: Microgrid, nominal: np.ndarray, scenarios: list[np.ndarray]) -> _Master:
    steps = mg.horizon
    b = ProblemBuilder(n_params=steps * (len(scenarios) + 1))
    fs = add_first_stage(b, mg)
    add_nominal(b, fs, mg, load_param(steps, 0))
    eta = b.add_var("eta", 1, 0.0, np.inf)
    b.add_cost(*day_ahead_coefficients(fs, mg))
    b.add_cost(eta, 1.0)
    for s in range(len(scenarios)):
        rb = add_recourse(b, fs, mg, load_param(steps, steps * (s + 1)), tag=f"y{s}")
        add_epigraph(b, rb, eta, f"epigraph{s}")
    problem = b.build(np.concatenate([nominal, *scenarios]))
    kkt = solve_lp(problem)
    if kkt.status == "infeasible":
        raise InfeasibleError("robust master is infeasible (nominal schedule or a pooled scenario)")
    kkt.raise_for_status("robust master")
    labels = problem.in_labels
    duals = np.array([kkt.mu[labels.index(f"epigraph{s}[0]")] for s in range(len(scenarios))])
    return _Master(schedule_from(kkt.z, fs), kkt.objective, duals)


def _evict(pool: list[np.ndarray], duals: np.ndarray) -> None:
    """Drop the oldest non-binding scenario (never the newest)."""
    for i in range(len(pool) - 1):
        if i < duals.size and duals[i] <= 1e-9:
            del pool[i]
            return
    del pool[0]


def solve_tsro_ccg(uset: UncertaintySet, mg: Microgrid, tol: float = DEFAULT_TOL,
                   max_iter: int = DEFAULT_MAX_ITER, inner: str = "ascent",
                   seed: int = 0, workers: int = 1, pool_cap: int = POOL_CAP) -> TsroSolution:
    """Column-and-constraint generation for the robust dispatch."""
    if uset.horizon != mg.horizon:
        raise DimensionError(f"uncertainty set covers {uset.horizon} steps, microgrid {mg.horizon}")
    if inner not in ("ascent", "enumerate"):
        raise ConfigError(f"unknown inner solver {inner!r}")
    started = time.perf_counter()
    pool = [uset.nominal.copy()]
    lb, ub = -np.inf, np.inf
    lbs, ubs = [], []
    best_x, best_u, best_da = None, None, 0.0
    gap = np.inf
    duals = np.zeros(0)

    for it in range(1, max_iter + 1):
        master = _solve_master(mg, uset.nominal, pool)
        duals = master.epigraph_duals
        lb = max(lb, master.value)
        x = master.x
        _, da = day_ahead_cost(x, mg.prices, mg.config.dt_hours)
        prog = RecourseProgram(x, mg)
        if inner == "enumerate":
            u, q = brute_force_worst_case(x, uset, mg, workers=workers, program=prog)
        else:
            u, q = worst_case_ascent(x, uset, mg, seed=seed + it, workers=workers, program=prog)
        if da + q < ub:
            ub, best_x, best_u, best_da = da + q, x, u, da
        lbs.append(lb)
        ubs.append(ub)
        gap = (ub - lb) / max(abs(ub), 1.0)
        log.debug("CCG iter %d: LB=%.6f UB=%.6f gap=%.2e pool=%d", it, lb, ub, gap, len(pool))
        if gap <= tol:
            break
        if any(np.array_equal(u.values, p) for p in pool):
            log.debug("CCG iter %d: worst case already pooled, stopping", it)
            break
        pool.append(u.values.copy())
        if len(pool) > pool_cap:
            _evict(pool, duals)
    else:
        raise NumericalError(f"CCG did not converge in {max_iter} iterations (gap {gap:.3g})")

    elapsed = time.perf_counter() - started
    log.info("CCG finished in %d iterations: cost=%.4f gap=%.2e (%.2fs)", it, ub, max(gap, 0.0), elapsed)
    return TsroSolution(
        x=best_x, worst_case_cost=ub, scenario_pool=[LoadTrajectory(p) for p in pool],
        iterations=it, gap=max(gap, 0.0), day_ahead_cost=best_da, worst_case=best_u,
        lower_bounds=lbs, upper_bounds=ubs, solve_seconds=elapsed,
        simultaneous=detect_simultaneity({k: getattr(best_x, k) for k in KEYS}),
    )


@dataclass
class TsroConfig:
    """Solver options for the robust dispatch."""
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    inner: str = "ascent"
    pool_cap: int = POOL_CAP
    workers: int = 1

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError(f"tsro.tol must be > 0, got {self.tol!r}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ConfigError(f"tsro.max_iter must be a positive integer, got {self.max_iter!r}")
        if self.inner not in ("ascent", "enumerate"):
            raise ConfigError(f"tsro.inner must be 'ascent' or 'enumerate', got {self.inner!r}")
        if self.pool_cap < 2:
            raise ConfigError(f"tsro.pool_cap must be >= 2, got {self.pool_cap!r}")
        if self.workers < 1:
            raise ConfigError(f"tsro.workers must be >= 1, got {self.workers!r}")

    def solve(self, uset: UncertaintySet, mg: Microgrid, seed: int = 0) -> TsroSolution:
        return solve_tsro_ccg(uset, mg, tol=self.tol, max_iter=int(self.max_iter),
                              inner=self.inner, seed=seed, workers=self.workers,
                              pool_cap=self.pool_cap)


def solve_tsro_vertex_enumeration(uset: UncertaintySet, mg: Microgrid,
                                  max_steps: int = VERTEX_LIMIT) -> TsroSolution:
    """Exact robust dispatch with every box vertex in the master."""
    if uset.horizon > max_steps:
        raise ConfigError(f"horizon too long for vertex enumeration: {uset.horizon} > {max_steps}")
    started = time.perf_counter()
    vertices = [uset.vertex(v) for v in _enumerate_vertices(uset)]
    master = _solve_master(mg, uset.nominal, vertices)
    _, da = day_ahead_cost(master.x, mg.prices, mg.config.dt_hours)
    worst = int(np.argmax([RecourseProgram(master.x, mg).solve(v).objective for v in vertices]))
    return TsroSolution(
        x=master.x, worst_case_cost=master.value,
        scenario_pool=[LoadTrajectory(v) for v in vertices], iterations=1, gap=0.0,
        day_ahead_cost=da, worst_case=LoadTrajectory(vertices[worst]),
        lower_bounds=[master.value], upper_bounds=[master.value],
        solve_seconds=time.perf_counter() - started,
    )
