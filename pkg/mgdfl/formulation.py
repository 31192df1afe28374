"""
mgdfl Formulation - Assemble dispatch programs as QpProblem instances.

Programs are described with per-step affine expressions (Affine) over
decision variables and a parameter vector theta. Constraints are added as
blocks `expr == 0` or `expr <= 0`; the builder turns them into

    A_eq z = b0_eq + P_eq theta
    A_in z <= b0_in + P_in theta

so the right-hand sides stay linear in theta (the load trajectories).

All quantities inside a program are divided by `scale` (1 for kW programs,
1000 for MW programs); theta is always in kW.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from mgdfl.objects import KEYS, FirstStageSchedule, Microgrid, RecoursePlan
from mgdfl.qp import QpProblem

log = logging.getLogger(__name__)


# ----------------------------------------------------------------------
# Affine expressions
# ----------------------------------------------------------------------

class Affine:
    """Vector of affine forms, one per row:

        row[i] = sum_k coef_k[i] * z[idx_k[i]] + const[i] + sum_j pcoef_j[i] * theta[pidx_j[i]]
    """

    __slots__ = ("rows", "terms", "const", "params")
    __array_ufunc__ = None

    def __init__(self, rows: int, terms=(), const=None, params=()):
        self.rows = rows
        self.terms: list[tuple[np.ndarray, np.ndarray]] = list(terms)
        self.const = np.zeros(rows) if const is None else np.broadcast_to(
            np.asarray(const, dtype=float), (rows,)).copy()
        self.params: list[tuple[np.ndarray, np.ndarray]] = list(params)

    @classmethod
    def var(cls, idx: np.ndarray, coef=1.0) -> Affine:
        idx = np.asarray(idx, dtype=np.int64)
        return cls(len(idx), terms=[(idx, np.broadcast_to(np.asarray(coef, float), idx.shape).copy())])

    @classmethod
    def constant(cls, values) -> Affine:
        values = np.atleast_1d(np.asarray(values, dtype=float))
        return cls(len(values), const=values)

    @classmethod
    def param(cls, pidx: np.ndarray, coef=1.0) -> Affine:
        pidx = np.asarray(pidx, dtype=np.int64)
        return cls(len(pidx), params=[(pidx, np.broadcast_to(np.asarray(coef, float), pidx.shape).copy())])

    def _scaled(self, factor) -> Affine:
        factor = np.broadcast_to(np.asarray(factor, dtype=float), (self.rows,))
        return Affine(self.rows,
                      terms=[(i, c * factor) for i, c in self.terms],
                      const=self.const * factor,
                      params=[(i, c * factor) for i, c in self.params])

    def __add__(self, other):
        if not isinstance(other, Affine):
            return Affine(self.rows, self.terms, self.const + other, self.params)
        if other.rows != self.rows:
            raise ValueError(f"row mismatch: {self.rows} vs {other.rows}")
        return Affine(self.rows, self.terms + other.terms, self.const + other.const,
                      self.params + other.params)

    __radd__ = __add__

    def __neg__(self):
        return self._scaled(-1.0)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, factor):
        return self._scaled(factor)

    __rmul__ = __mul__

    def __getitem__(self, key) -> Affine:
        sel = np.arange(self.rows)[key]
        sel = np.atleast_1d(sel)
        return Affine(len(sel),
                      terms=[(i[sel], c[sel]) for i, c in self.terms],
                      const=self.const[sel],
                      params=[(i[sel], c[sel]) for i, c in self.params])

    def value(self, z: np.ndarray, theta: np.ndarray | None = None) -> np.ndarray:
        out = self.const.copy()
        for i, c in self.terms:
            out += c * z[i]
        if theta is not None:
            for i, c in self.params:
                out += c * theta[i]
        return out


# ----------------------------------------------------------------------
# Builder
# ----------------------------------------------------------------------

@dataclass
class _Block:
    expr: Affine
    label: str
    names: list[str] | None = None


class ProblemBuilder:
    """Collect variables, costs and constraint blocks, then emit a QpProblem."""

    def __init__(self, n_params: int = 0):
        self.n_params = n_params
        self.names: list[str] = []
        self._lb: list[np.ndarray] = []
        self._ub: list[np.ndarray] = []
        self._cost: dict[int, float] = {}
        self._eq: list[_Block] = []
        self._in: list[_Block] = []
        self.groups: dict[str, np.ndarray] = {}

    @property
    def n_vars(self) -> int:
        return len(self.names)

    def add_var(self, name: str, size: int, lb=0.0, ub=np.inf) -> np.ndarray:
        start = self.n_vars
        idx = np.arange(start, start + size)
        self.names.extend(f"{name}[{i}]" for i in range(size))
        self._lb.append(np.broadcast_to(np.asarray(lb, dtype=float), (size,)).copy())
        self._ub.append(np.broadcast_to(np.asarray(ub, dtype=float), (size,)).copy())
        self.groups[name] = idx
        return idx

    def add_cost(self, idx: np.ndarray, coef) -> None:
        coef = np.broadcast_to(np.asarray(coef, dtype=float), np.shape(idx))
        for i, c in zip(np.atleast_1d(idx), np.atleast_1d(coef)):
            self._cost[int(i)] = self._cost.get(int(i), 0.0) + float(c)

    def add_eq(self, expr: Affine, label: str) -> None:
        self._eq.append(_Block(expr, label))

    def add_le(self, expr: Affine, label: str) -> None:
        self._in.append(_Block(expr, label))

    def _assemble(self, blocks: list[_Block]):
        rows, cols, data = [], [], []
        prows, pcols, pdata = [], [], []
        b0, labels = [], []
        offset = 0
        for block in blocks:
            e = block.expr
            r = np.arange(offset, offset + e.rows)
            for idx, coef in e.terms:
                rows.append(r)
                cols.append(idx)
                data.append(coef)
            for pidx, coef in e.params:
                prows.append(r)
                pcols.append(pidx)
                pdata.append(-coef)
            b0.append(-e.const)
            if block.names is not None:
                labels.extend(block.names)
            else:
                labels.extend(f"{block.label}[{t}]" for t in range(e.rows))
            offset += e.rows
        n = self.n_vars

        def _coo(rs, cs, ds, shape):
            if not rs:
                return sp.csr_matrix(shape)
            return sp.coo_matrix((np.concatenate(ds), (np.concatenate(rs), np.concatenate(cs))),
                                 shape=shape).tocsr()

        a = _coo(rows, cols, data, (offset, n))
        p = _coo(prows, pcols, pdata, (offset, self.n_params))
        b = np.concatenate(b0) if b0 else np.zeros(0)
        return a, p, b, labels

    def bound_rows(self) -> list[_Block]:
        lb = np.concatenate(self._lb) if self._lb else np.zeros(0)
        ub = np.concatenate(self._ub) if self._ub else np.zeros(0)
        out = []
        lo = np.flatnonzero(np.isfinite(lb))
        if lo.size:
            out.append(_Block(Affine.var(lo, -1.0) + lb[lo], "lb",
                              [f"lb:{self.names[i]}" for i in lo]))
        hi = np.flatnonzero(np.isfinite(ub))
        if hi.size:
            out.append(_Block(Affine.var(hi, 1.0) - ub[hi], "ub",
                              [f"ub:{self.names[i]}" for i in hi]))
        return out

    def build(self, theta=None, reg: float = 0.0) -> QpProblem:
        """Emit the program; `reg` adds (reg/2)*||z||^2 to the objective."""
        theta = np.zeros(self.n_params) if theta is None else np.asarray(theta, dtype=float)
        a_eq, p_eq, b0_eq, eq_labels = self._assemble(self._eq)
        a_in, p_in, b0_in, in_labels = self._assemble(self._in + self.bound_rows())
        g = np.zeros(self.n_vars)
        for i, c in self._cost.items():
            g[i] = c
        h = sp.identity(self.n_vars, format="csr") * reg if reg > 0 else sp.csr_matrix((self.n_vars, self.n_vars))
        return QpProblem(
            H=h, g=g, A_eq=a_eq, b_eq=b0_eq + p_eq @ theta, A_in=a_in, b_in=b0_in + p_in @ theta,
            var_names=list(self.names), eq_labels=eq_labels, in_labels=in_labels,
            P_eq=p_eq, P_in=p_in, b0_eq=b0_eq, b0_in=b0_in, theta=theta.copy(),
        )


# ----------------------------------------------------------------------
# Microgrid blocks
# ----------------------------------------------------------------------

@dataclass
class FirstStageBlock:
    """First-stage quantities as expressions (variables or fixed constants)."""
    power: dict[str, Affine]
    e_sch: Affine | None = None
    cur_wt: Affine | None = None
    cur_pv: Affine | None = None
    index: dict[str, np.ndarray] = field(default_factory=dict)

    def all_index(self) -> np.ndarray:
        return np.concatenate([self.index[k] for k in self.index]) if self.index else np.zeros(0, int)


@dataclass
class RecourseBlock:
    """Index arrays of one scenario's recourse variables."""
    up: dict[str, np.ndarray]
    down: dict[str, np.ndarray]
    e: np.ndarray
    dlc: np.ndarray
    cur_wt: np.ndarray
    cur_pv: np.ndarray
    realized: dict[str, Affine]
    cost: Affine  # one row
    slack: dict[str, np.ndarray] = field(default_factory=dict)


def add_first_stage(b: ProblemBuilder, mg: Microgrid, scale: float = 1.0,
                    tag: str = "x") -> FirstStageBlock:
    """Scheduled powers, nominal ESS path (dynamics + bounds) and nominal
    curtailment variables."""
    cfg, steps = mg.config, mg.horizon
    index = {}
    power = {}
    for k in KEYS:
        idx = b.add_var(f"{tag}.{k}", steps, 0.0, cfg.device_max(k) / scale)
        index[k] = idx
        power[k] = Affine.var(idx)
    e_idx = b.add_var(f"{tag}.e_sch", steps + 1, 0.0, cfg.e_ess_max / scale)
    index["e_sch"] = e_idx
    e = Affine.var(e_idx)
    _add_ess_dynamics(b, e, power["ch"], power["dis"], mg, scale, f"{tag}.ess")
    res = mg.renewables
    wt = b.add_var(f"{tag}.cur_wt_sch", steps, 0.0, res.p_wt / scale)
    pv = b.add_var(f"{tag}.cur_pv_sch", steps, 0.0, res.p_pv / scale)
    index["cur_wt_sch"], index["cur_pv_sch"] = wt, pv
    return FirstStageBlock(power=power, e_sch=e, cur_wt=Affine.var(wt), cur_pv=Affine.var(pv),
                           index=index)


def fixed_first_stage(x: FirstStageSchedule, scale: float = 1.0) -> FirstStageBlock:
    return FirstStageBlock(
        power={k: Affine.constant(x.power(k) / scale) for k in KEYS},
        e_sch=Affine.constant(x.e_sch / scale),
        cur_wt=Affine.constant(x.cur_wt_sch / scale),
        cur_pv=Affine.constant(x.cur_pv_sch / scale),
    )


def schedule_from(z: np.ndarray, fs: FirstStageBlock, scale: float = 1.0) -> FirstStageSchedule:
    """Read a FirstStageSchedule (kW) out of a solution vector."""
    steps = len(fs.index["buy"])

    def _get(key):
        return z[fs.index[key]] * scale if key in fs.index else np.zeros(steps)

    return FirstStageSchedule(
        buy=_get("buy"), sell=_get("sell"), ch=_get("ch"), dis=_get("dis"),
        e_sch=z[fs.index["e_sch"]] * scale,
        cur_wt_sch=_get("cur_wt_sch"), cur_pv_sch=_get("cur_pv_sch"),
    )


def _add_ess_dynamics(b: ProblemBuilder, e: Affine, ch: Affine, dis: Affine,
                      mg: Microgrid, scale: float, label: str) -> None:
    cfg = mg.config
    steps = mg.horizon
    nxt, cur = e[1:steps + 1], e[0:steps]
    b.add_eq(nxt - cur - ch * (cfg.eta_ch * cfg.dt_hours) + dis * (cfg.dt_hours / cfg.eta_dis),
             f"{label}_dynamics")
    b.add_eq(e[0] - cfg.e_init / scale, f"{label}_initial")


def load_param(steps: int, offset: int, scale: float = 1.0) -> Affine:
    """Load trajectory theta[offset:offset+steps] expressed in program units."""
    return Affine.param(np.arange(offset, offset + steps), 1.0 / scale)


def add_voltage_rows(b: ProblemBuilder, mg: Microgrid, net_load: Affine,
                     injections: dict[str, Affine], scale: float, label: str,
                     slack: tuple[Affine, Affine] | None = None) -> None:
    """|1 - v| <= v_max at every non-slack bus for the given dispatch.

    `slack` = (low, high) per-step elastic terms shared by all buses.
    """
    net = mg.network
    if net is None:
        return
    offset = net.topology.base_voltage - 1.0
    v_max = mg.config.v_max
    for i in net.rows:
        drop = net_load * (net.load_coef[i] * scale)
        for device, inj in injections.items():
            coef = net.device_coef.get(device)
            if coef is not None and coef[i] != 0.0:
                drop = drop - inj * (coef[i] * scale)
        low = drop - (v_max + offset)
        high = -drop - (v_max - offset)
        if slack is not None:
            low, high = low - slack[0], high - slack[1]
        bus = net.topology.bus_labels[i]
        b.add_le(low, f"{label}.v_low@{bus}")
        b.add_le(high, f"{label}.v_high@{bus}")


def _renewable(available: np.ndarray, scheduled: Affine | None, cur: np.ndarray,
               b: ProblemBuilder, scale: float, label: str) -> Affine:
    """Renewable output after scheduled and recourse curtailment."""
    out = Affine.constant(available / scale) - Affine.var(cur)
    if scheduled is not None:
        out = out - scheduled
        b.add_le(Affine.var(cur) + scheduled - available / scale, label)
    return out


def add_nominal(b: ProblemBuilder, fs: FirstStageBlock, mg: Microgrid,
                nominal: Affine, scale: float = 1.0, tag: str = "x") -> None:
    """Nominal power balance and network feasibility of the schedule."""
    res = mg.renewables
    p = fs.power
    wt = Affine.constant(res.p_wt / scale) - fs.cur_wt
    pv = Affine.constant(res.p_pv / scale) - fs.cur_pv
    supply = wt + pv + p["dis"] - p["ch"] + p["buy"] - p["sell"]
    b.add_eq(supply - nominal, f"{tag}.power_balance")
    add_voltage_rows(b, mg, nominal, {"ess": p["dis"] - p["ch"], "pv": pv, "wt": wt},
                     scale, f"{tag}.voltage")


def add_recourse(b: ProblemBuilder, fs: FirstStageBlock, mg: Microgrid, load: Affine,
                 scale: float = 1.0, tag: str = "y", emergency: bool = False,
                 elastic: bool = False) -> RecourseBlock:
    """One scenario's recourse variables, constraints and cost expression.

    With `emergency` the reserve caps are lifted and DLC may shed all load.
    With `elastic` the power balance and voltage rows get nonnegative slack
    variables (in RecourseBlock.slack) so the block is always feasible.
    """
    cfg, prices, res = mg.config, mg.prices, mg.renewables
    steps = mg.horizon
    up, down, realized = {}, {}, {}
    for k in KEYS:
        cap_up = np.inf if emergency else cfg.reserve_up[k] / scale
        cap_down = np.inf if emergency else cfg.reserve_down[k] / scale
        up[k] = b.add_var(f"{tag}.up_{k}", steps, 0.0, cap_up)
        down[k] = b.add_var(f"{tag}.down_{k}", steps, 0.0, cap_down)
        realized[k] = fs.power[k] + Affine.var(up[k]) - Affine.var(down[k])
        b.add_le(-realized[k], f"{tag}.{k}_limit_low")
        b.add_le(realized[k] - cfg.device_max(k) / scale, f"{tag}.{k}_limit")

    e = b.add_var(f"{tag}.e", steps + 1, 0.0, cfg.e_ess_max / scale)
    _add_ess_dynamics(b, Affine.var(e), realized["ch"], realized["dis"], mg, scale, f"{tag}.ess")

    dlc = b.add_var(f"{tag}.dlc", steps, 0.0, np.inf)
    ratio = 1.0 if emergency else cfg.dlc_ratio
    b.add_le(Affine.var(dlc) - load * ratio, f"{tag}.dlc_limit")

    cur_wt = b.add_var(f"{tag}.cur_wt", steps, 0.0, res.p_wt / scale)
    cur_pv = b.add_var(f"{tag}.cur_pv", steps, 0.0, res.p_pv / scale)
    wt = _renewable(res.p_wt, fs.cur_wt, cur_wt, b, scale, f"{tag}.curtail_wt_limit")
    pv = _renewable(res.p_pv, fs.cur_pv, cur_pv, b, scale, f"{tag}.curtail_pv_limit")
    r = realized
    supply = wt + pv + r["dis"] - r["ch"] + r["buy"] - r["sell"]
    balance = supply - (load - Affine.var(dlc))

    slack = {}
    v_slack = None
    if elastic:
        slack["shortage"] = b.add_var(f"{tag}.shortage", steps)
        slack["surplus"] = b.add_var(f"{tag}.surplus", steps)
        balance = balance + Affine.var(slack["shortage"]) - Affine.var(slack["surplus"])
        if mg.network is not None:
            slack["v_low"] = b.add_var(f"{tag}.v_low_slack", steps)
            slack["v_high"] = b.add_var(f"{tag}.v_high_slack", steps)
            v_slack = (Affine.var(slack["v_low"]), Affine.var(slack["v_high"]))
    b.add_eq(balance, f"{tag}.power_balance")

    add_voltage_rows(b, mg, load - Affine.var(dlc),
                     {"ess": r["dis"] - r["ch"], "pv": pv, "wt": wt}, scale,
                     f"{tag}.voltage", slack=v_slack)

    dt = cfg.dt_hours * scale
    idx_parts, coef_parts = [], []
    for k in KEYS:
        idx_parts += [up[k], down[k]]
        coef_parts += [np.full(steps, prices.pi_up[k] * dt), np.full(steps, prices.pi_down[k] * dt)]
    idx_parts += [dlc, cur_wt, cur_pv]
    coef_parts += [np.full(steps, prices.c_dlc * dt), np.full(steps, prices.c_cur * dt),
                   np.full(steps, prices.c_cur * dt)]
    idx = np.concatenate(idx_parts)
    coef = np.concatenate(coef_parts)
    cost = Affine(1, terms=[(idx[j:j + 1], coef[j:j + 1]) for j in range(idx.size)])
    return RecourseBlock(up=up, down=down, e=e, dlc=dlc, cur_wt=cur_wt, cur_pv=cur_pv,
                         realized=realized, cost=cost, slack=slack)


def recourse_cost_coefficients(rb: RecourseBlock) -> tuple[np.ndarray, np.ndarray]:
    idx = np.concatenate([i for i, _ in rb.cost.terms])
    coef = np.concatenate([c for _, c in rb.cost.terms])
    return idx, coef


def recourse_plan(z: np.ndarray, rb: RecourseBlock, scale: float = 1.0) -> RecoursePlan:
    """Read a RecoursePlan (kW, kWh) out of a solution vector."""
    return RecoursePlan(
        up={k: z[rb.up[k]] * scale for k in KEYS},
        down={k: z[rb.down[k]] * scale for k in KEYS},
        e=z[rb.e] * scale, p_dlc=z[rb.dlc] * scale,
        p_cur_wt=z[rb.cur_wt] * scale, p_cur_pv=z[rb.cur_pv] * scale,
    )


def day_ahead_coefficients(fs: FirstStageBlock, mg: Microgrid,
                           scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Linear day-ahead cost over the first-stage power variables."""
    prices = mg.prices
    dt = mg.config.dt_hours * scale
    steps = mg.horizon
    idx = np.concatenate([fs.index[k] for k in KEYS])
    coef = np.concatenate([
        prices.buy_da * dt, -prices.sell_da * dt,
        np.full(steps, prices.c_ch * dt), np.full(steps, prices.c_dis * dt),
    ])
    return idx, coef


def add_epigraph(b: ProblemBuilder, rb: RecourseBlock, eta: np.ndarray, label: str) -> None:
    """eta >= recourse cost of one scenario."""
    b.add_le(rb.cost - Affine.var(eta), label)
