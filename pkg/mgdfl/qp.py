"""
mgdfl QP - Convex QP/LP solver with primal and dual solutions.

Problems have the form

    min  1/2 z'Hz + g'z + constant
    s.t. A_eq z  = b_eq        (multipliers nu)
         A_in z <= b_in        (multipliers mu >= 0)

with variable bounds stored as inequality rows. The right-hand sides may
depend linearly on a parameter vector theta: b = b0 + P theta.

solve_qp is a dense primal-dual interior-point method (Mehrotra
predictor-corrector) accurate enough for differentiating through the KKT
system. solve_lp hands pure LPs to HiGHS and reads the multipliers from the
solver's marginals.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import linprog

from mgdfl.errors import DimensionError, InfeasibleError, NumericalError
from mgdfl.protocol import dump_qp

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200
LP_DAMPING = 1e-9

_DIVERGENCE = 1e10
_UNBOUNDED = 1e12
_STALL_PRIMAL = 1e-6
_MAX_REG = 1e-4


def _csr(a, shape) -> sp.csr_matrix:
    if a is None:
        return sp.csr_matrix(shape)
    if sp.issparse(a):
        return a.tocsr().astype(float)
    return sp.csr_matrix(np.atleast_2d(np.asarray(a, dtype=float)).reshape(shape))


def _vec(v, size: int) -> np.ndarray:
    if v is None:
        return np.zeros(size)
    return np.atleast_1d(np.asarray(v, dtype=float)).reshape(size)


@dataclass
class QpProblem:
    """Convex quadratic program with parametric right-hand sides."""
    H: sp.csr_matrix
    g: np.ndarray
    A_eq: sp.csr_matrix | None = None
    b_eq: np.ndarray | None = None
    A_in: sp.csr_matrix | None = None
    b_in: np.ndarray | None = None
    var_names: list[str] = field(default_factory=list)
    eq_labels: list[str] = field(default_factory=list)
    in_labels: list[str] = field(default_factory=list)
    P_eq: sp.csr_matrix | None = None
    P_in: sp.csr_matrix | None = None
    b0_eq: np.ndarray | None = None
    b0_in: np.ndarray | None = None
    theta: np.ndarray | None = None
    constant: float = 0.0

    def __post_init__(self):
        self.g = np.atleast_1d(np.asarray(self.g, dtype=float))
        n = self.g.size
        self.H = _csr(self.H, (n, n))
        m_eq = 0 if self.b_eq is None else np.size(self.b_eq)
        m_in = 0 if self.b_in is None else np.size(self.b_in)
        self.A_eq = _csr(self.A_eq, (m_eq, n))
        self.A_in = _csr(self.A_in, (m_in, n))
        self.b_eq = _vec(self.b_eq, m_eq)
        self.b_in = _vec(self.b_in, m_in)
        if self.H.shape != (n, n):
            raise DimensionError(f"H has shape {self.H.shape}, expected {(n, n)}")
        for name, a, m in (("A_eq", self.A_eq, m_eq), ("A_in", self.A_in, m_in)):
            if a.shape != (m, n):
                raise DimensionError(f"{name} has shape {a.shape}, expected {(m, n)}")
        asym = abs(self.H - self.H.T)
        if asym.nnz and asym.max() > 1e-10:
            raise DimensionError("H is not symmetric")
        p = 0 if self.theta is None else np.size(self.theta)
        self.theta = _vec(self.theta, p)
        self.P_eq = _csr(self.P_eq, (m_eq, p))
        self.P_in = _csr(self.P_in, (m_in, p))
        self.b0_eq = self.b_eq - self.P_eq @ self.theta if self.b0_eq is None else _vec(self.b0_eq, m_eq)
        self.b0_in = self.b_in - self.P_in @ self.theta if self.b0_in is None else _vec(self.b0_in, m_in)
        if not self.var_names:
            self.var_names = [f"z[{i}]" for i in range(n)]
        if not self.eq_labels:
            self.eq_labels = [f"eq[{i}]" for i in range(m_eq)]
        if not self.in_labels:
            self.in_labels = [f"in[{i}]" for i in range(m_in)]

    @property
    def n(self) -> int:
        return self.g.size

    @property
    def m_eq(self) -> int:
        return self.b_eq.size

    @property
    def m_in(self) -> int:
        return self.b_in.size

    @property
    def is_lp(self) -> bool:
        return self.H.nnz == 0 or float(abs(self.H).max()) == 0.0

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ (self.H @ z) + self.g @ z + self.constant)

    def with_params(self, theta) -> QpProblem:
        """Same program with right-hand sides re-evaluated at theta."""
        theta = _vec(theta, self.theta.size)
        return replace(self, b_eq=self.b0_eq + self.P_eq @ theta,
                       b_in=self.b0_in + self.P_in @ theta, theta=theta)

    def with_damping(self, delta: float) -> QpProblem:
        return replace(self, H=self.H + delta * sp.identity(self.n, format="csr"))


@dataclass
class KktPoint:
    """Primal-dual point returned by the solvers."""
    z: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    status: str
    residuals: dict[str, float]
    objective: float
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def raise_for_status(self, what: str = "program") -> KktPoint:
        if self.status == INFEASIBLE:
            raise InfeasibleError(f"{what} is infeasible")
        if self.status == UNBOUNDED:
            raise NumericalError(f"{what} is unbounded")
        if self.status != OPTIMAL:
            raise NumericalError(f"{what} did not converge after {self.iterations} iterations "
                                 f"(residuals {self.residuals})")
        return self


def kkt_residuals(p: QpProblem, z: np.ndarray, nu: np.ndarray, mu: np.ndarray) -> dict[str, float]:
    """Infinity norms of the four KKT residual blocks."""
    r_d = p.H @ z + p.g + p.A_eq.T @ nu + p.A_in.T @ mu
    r_e = p.A_eq @ z - p.b_eq
    gi = p.A_in @ z - p.b_in

    def _norm(v):
        return float(np.max(np.abs(v))) if v.size else 0.0

    return {
        "stationarity": _norm(r_d),
        "primal_eq": _norm(r_e),
        "primal_in": _norm(np.maximum(gi, 0.0)),
        "complementarity": _norm(mu * gi),
    }


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _inf(a) -> float:
    if sp.issparse(a):
        return float(abs(a).max()) if a.nnz else 0.0
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


def _factor(base: np.ndarray, n: int, delta_p: float, delta_d: float):
    """LU of the regularized KKT matrix; None when a pivot is exactly zero."""
    K = base.copy()
    diag = np.arange(K.shape[0])
    K[diag[:n], diag[:n]] += delta_p
    K[diag[n:], diag[n:]] -= delta_d
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            return sla.lu_factor(K, check_finite=False)
        except (ValueError, np.linalg.LinAlgError, sla.LinAlgWarning):
            return None


def solve_qp(p: QpProblem, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> KktPoint:
    """Mehrotra predictor-corrector interior-point method on dense factorizations."""
    n, me, mi = p.n, p.m_eq, p.m_in
    H = p.H.toarray()
    Ae, Ai = p.A_eq, p.A_in
    AeT, AiT = Ae.T.tocsr(), Ai.T.tocsr()
    Ae_dense = Ae.toarray()
    delta_p, delta_d = 1e-12, 1e-12

    scale_d = 1.0 + max(_inf(p.g), _inf(p.H), _inf(Ae), _inf(Ai))
    scale_e = 1.0 + _inf(p.b_eq)
    scale_i = 1.0 + _inf(p.b_in)

    z = np.zeros(n)
    nu = np.zeros(me)
    s = np.maximum(p.b_in - Ai @ z, 1.0)
    mu = np.ones(mi)
    status = MAX_ITER
    it = 0

    for it in range(max_iter + 1):
        r_d = H @ z + p.g + AeT @ nu + AiT @ mu
        r_e = Ae @ z - p.b_eq
        r_i = Ai @ z + s - p.b_in
        gap = float(s @ mu) / mi if mi else 0.0
        res_d = _inf(r_d) / scale_d
        res_p = max(_inf(r_e) / scale_e, _inf(r_i) / scale_i)
        obj = float(0.5 * z @ H @ z + p.g @ z)
        log.debug("ipm it %d: obj=%.10g rd=%.2e rp=%.2e gap=%.2e", it, obj, res_d, res_p, gap)

        if res_d <= tol and res_p <= tol and gap * mi <= tol * (1.0 + abs(obj)):
            status = OPTIMAL
            break
        if res_p > tol and max(_inf(nu), _inf(mu)) > _DIVERGENCE:
            status = INFEASIBLE
            break
        if _inf(z) > _UNBOUNDED:
            status = UNBOUNDED
            break
        if it == max_iter:
            break

        w = mu / s
        base = np.zeros((n + me, n + me))
        base[:n, :n] = H + (AiT @ sp.diags(w) @ Ai).toarray()
        base[:n, n:] = Ae_dense.T
        base[n:, :n] = Ae_dense

        def newton(lu):
            """Predictor-corrector direction, or None when it is not finite."""
            def direction(r_c):
                rhs = np.concatenate([-r_d - AiT @ (w * r_i - r_c / s), -r_e])
                sol = sla.lu_solve(lu, rhs, check_finite=False)
                dz, dnu = sol[:n], sol[n:]
                dmu = w * (Ai @ dz + r_i) - r_c / s
                ds = (-r_c - s * dmu) / mu
                return dz, dnu, dmu, ds

            with np.errstate(all="ignore"):
                step = direction(s * mu)
                if mi:
                    dz, dnu, dmu, ds = step
                    a_aff = min(_max_step(s, ds), _max_step(mu, dmu))
                    gap_aff = float((s + a_aff * ds) @ (mu + a_aff * dmu)) / mi
                    sigma = min(1.0, gap_aff / gap) ** 3 if gap > 0 else 0.0
                    step = direction(s * mu + ds * dmu - sigma * gap)
            return step if all(np.all(np.isfinite(v)) for v in step) else None

        # singular or non-finite systems retry with a stronger regularization
        step = None
        while True:
            lu = _factor(base, n, delta_p, delta_d)
            step = newton(lu) if lu is not None else None
            if step is not None or delta_p >= _MAX_REG:
                break
            delta_p = delta_d = min(100.0 * delta_p, _MAX_REG)
            log.debug("ipm: KKT regularization raised to %.0e at it %d", delta_p, it)
        if step is None:
            log.debug("ipm: KKT system singular at it %d", it)
            break
        dz, dnu, dmu, ds = step
        alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(mu, dmu))) if mi else 1.0
        if alpha < 1e-12:
            log.debug("ipm: stalled at it %d", it)
            break
        z = z + alpha * dz
        nu = nu + alpha * dnu
        s = s + alpha * ds
        mu = mu + alpha * dmu

    if status == MAX_ITER:
        r_e = Ae @ z - p.b_eq
        r_i = Ai @ z + s - p.b_in
        if max(_inf(r_e) / scale_e, _inf(r_i) / scale_i) > _STALL_PRIMAL:
            status = INFEASIBLE
    mu = np.maximum(mu, 0.0)
    return KktPoint(z=z, nu=nu, mu=mu, status=status, residuals=kkt_residuals(p, z, nu, mu),
                    objective=p.objective(z), iterations=it)


def solve_lp(p: QpProblem, tol: float = DEFAULT_TOL) -> KktPoint:
    """Solve an LP with HiGHS; falls back to the damped interior-point path."""
    res = linprog(
        c=p.g,
        A_ub=p.A_in if p.m_in else None, b_ub=p.b_in if p.m_in else None,
        A_eq=p.A_eq if p.m_eq else None, b_eq=p.b_eq if p.m_eq else None,
        bounds=(None, None), method="highs",
    )
    if res.status == 2:
        return _empty_point(p, INFEASIBLE)
    if res.status == 3:
        return _empty_point(p, UNBOUNDED)
    if res.status != 0 or res.x is None:
        log.warning("HiGHS returned status %d (%s); retrying with the interior-point path",
                    res.status, res.message)
        return solve_qp(p.with_damping(LP_DAMPING), tol=max(tol, 1e-9))
    z = np.asarray(res.x, dtype=float)
    nu = -np.asarray(res.eqlin.marginals, dtype=float) if p.m_eq else np.zeros(0)
    mu = np.maximum(-np.asarray(res.ineqlin.marginals, dtype=float), 0.0) if p.m_in else np.zeros(0)
    return KktPoint(z=z, nu=nu, mu=mu, status=OPTIMAL, residuals=kkt_residuals(p, z, nu, mu),
                    objective=p.objective(z), iterations=int(getattr(res, "nit", 0)))


def _empty_point(p: QpProblem, status: str) -> KktPoint:
    nan = float("nan")
    return KktPoint(z=np.full(p.n, nan), nu=np.full(p.m_eq, nan), mu=np.full(p.m_in, nan),
                    status=status, residuals={}, objective=nan)


def solve(p: QpProblem, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> KktPoint:
    """Dispatch to solve_lp for pure LPs and to solve_qp otherwise."""
    kkt = solve_lp(p, tol) if p.is_lp else solve_qp(p, tol, max_iter)
    if not kkt.optimal and log.isEnabledFor(logging.DEBUG):
        log.debug("%s program:\n%s", kkt.status, dump_qp(p))
    return kkt


# ----------------------------------------------------------------------
# Variable fixing
# ----------------------------------------------------------------------

@dataclass
class FixMap:
    """How a reduced program relates to the full one."""
    n_full: int
    keep: np.ndarray
    fixed: np.ndarray
    values: np.ndarray
    eq_rows: np.ndarray
    in_rows: np.ndarray

    def expand(self, z_reduced: np.ndarray) -> np.ndarray:
        z = np.empty(self.n_full)
        z[self.keep] = z_reduced
        z[self.fixed] = self.values
        return z


def fix_variables(p: QpProblem, idx, values,
                  tol: float = 1e-6) -> tuple[QpProblem, float, FixMap]:
    """Eliminate the variables `idx` at `values`.

    Returns the reduced program (its `constant` already includes the fixed
    part of the objective), that constant and the FixMap. Rows touching only
    fixed variables are dropped after checking they hold; a violated row
    raises InfeasibleError.
    """
    idx = np.asarray(idx, dtype=np.int64)
    values = np.asarray(values, dtype=float).reshape(idx.shape)
    mask = np.zeros(p.n, dtype=bool)
    mask[idx] = True
    keep = np.flatnonzero(~mask)
    H = p.H
    H_kk = H[keep][:, keep]
    H_kf = H[keep][:, idx]
    H_ff = H[idx][:, idx]
    g = p.g[keep] + H_kf @ values
    constant = float(0.5 * values @ (H_ff @ values) + p.g[idx] @ values)

    def _reduce(a, b0, b, pm, labels, kind):
        a_k = a[:, keep]
        shift = a[:, idx] @ values
        empty = np.diff(a_k.indptr) == 0
        rhs = b - shift
        if kind == "eq":
            bad = empty & (np.abs(rhs) > tol * (1.0 + np.abs(b)))
        else:
            bad = empty & (rhs < -tol * (1.0 + np.abs(b)))
        if np.any(bad):
            first = int(np.flatnonzero(bad)[0])
            raise InfeasibleError(f"fixed values violate {labels[first]} by {abs(rhs[first]):.3g}")
        rows = np.flatnonzero(~empty)
        return (a_k[rows], b0[rows] - shift[rows], rhs[rows], pm[rows],
                [labels[r] for r in rows], rows)

    a_eq, b0_eq, b_eq, p_eq, eq_labels, eq_rows = _reduce(
        p.A_eq, p.b0_eq, p.b_eq, p.P_eq, p.eq_labels, "eq")
    a_in, b0_in, b_in, p_in, in_labels, in_rows = _reduce(
        p.A_in, p.b0_in, p.b_in, p.P_in, p.in_labels, "in")
    reduced = QpProblem(
        H=H_kk, g=g, A_eq=a_eq, b_eq=b_eq, A_in=a_in, b_in=b_in,
        var_names=[p.var_names[i] for i in keep], eq_labels=eq_labels, in_labels=in_labels,
        P_eq=p_eq, P_in=p_in, b0_eq=b0_eq, b0_in=b0_in, theta=p.theta,
        constant=p.constant + constant,
    )
    return reduced, constant, FixMap(p.n, keep, idx, values, eq_rows, in_rows)
