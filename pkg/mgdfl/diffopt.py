"""
mgdfl Diffopt - Implicit differentiation through a solved QP.

At an optimum the KKT residual

    F(w; theta) = [ Hz + g + A_eq' nu + A_in' mu ]
                  [ A_eq z - b_eq(theta)          ]
                  [ mu * (A_in z - b_in(theta))   ]

vanishes, so for a loss L(z) the gradient in theta follows from one
adjoint solve

    (dF/dw)' v = (dL/dw)'        grad_theta L = -(dF/dtheta)' v

with w = (z, nu, mu_active). Clearly inactive rows (mu ~ 0, slack > 0) are
dropped; kept complementarity rows are divided by max(mu_i, eps) so active
rows read as A_i dz = 0.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from mgdfl.errors import NumericalError
from mgdfl.qp import KktPoint, QpProblem

log = logging.getLogger(__name__)

EPS_ACTIVE = 1e-7
DAMPING = 1e-8
ADJOINT_TOL = 1e-8


def _dense(a) -> np.ndarray:
    return a.toarray() if hasattr(a, "toarray") else np.asarray(a, dtype=float)


def kkt_residual(w: KktPoint, p: QpProblem) -> np.ndarray:
    """Stacked [stationarity; equality; complementarity] residual at w."""
    z, nu, mu = w.z, w.nu, w.mu
    stationarity = p.H @ z + p.g + p.A_eq.T @ nu + p.A_in.T @ mu
    equality = p.A_eq @ z - p.b_eq
    complementarity = mu * (p.A_in @ z - p.b_in)
    return np.concatenate([stationarity, equality, complementarity])


@dataclass
class KktSystem:
    """Jacobians of the conditioned KKT residual at a solution."""
    jacobian: np.ndarray
    param_jacobian: np.ndarray
    active_mask: np.ndarray
    n: int
    m_eq: int
    degenerate: int = 0

    @property
    def size(self) -> int:
        return self.jacobian.shape[0]

    @property
    def m_active(self) -> int:
        return int(self.active_mask.sum())

    def lift(self, dl_dz: np.ndarray) -> np.ndarray:
        """dL/dw for a loss that depends on z only."""
        dl_dz = np.asarray(dl_dz, dtype=float).ravel()
        if dl_dz.size != self.n:
            raise ValueError(f"dL/dz has {dl_dz.size} entries, expected {self.n}")
        return np.concatenate([dl_dz, np.zeros(self.size - self.n)])


def build_kkt_system(p: QpProblem, kkt: KktPoint, eps_active: float = EPS_ACTIVE,
                     damping: float = DAMPING) -> KktSystem:
    n, me = p.n, p.m_eq
    gi = p.A_in @ kkt.z - p.b_in
    mu = kkt.mu
    inactive = (mu < eps_active) & (-gi > eps_active)
    weak = (mu < eps_active) & (-gi <= eps_active)
    keep = ~inactive

    a_act = _dense(p.A_in[keep]) if p.m_in else np.zeros((0, n))
    mu_k, g_k = mu[keep], gi[keep]
    row_scale = 1.0 / np.maximum(mu_k, eps_active)
    ma = int(keep.sum())

    jac = np.zeros((n + me + ma, n + me + ma))
    a_eq = _dense(p.A_eq)
    jac[:n, :n] = _dense(p.H)
    jac[:n, n:n + me] = a_eq.T
    jac[:n, n + me:] = a_act.T
    jac[n:n + me, :n] = a_eq
    jac[n + me:, :n] = (mu_k * row_scale)[:, None] * a_act
    diag = g_k * row_scale
    diag[weak[keep]] -= damping
    jac[n + me:, n + me:] = np.diag(diag)

    n_par = p.theta.size
    param = np.zeros((n + me + ma, n_par))
    param[n:n + me] = -_dense(p.P_eq)
    if ma:
        param[n + me:] = -(mu_k * row_scale)[:, None] * _dense(p.P_in[keep])

    degenerate = int(weak.sum())
    if degenerate:
        log.warning("KKT system has %d weakly active pair(s); damping applied", degenerate)
    return KktSystem(jacobian=jac, param_jacobian=param, active_mask=keep, n=n, m_eq=me,
                     degenerate=degenerate)


def _residual(sys: KktSystem, v: np.ndarray, rhs: np.ndarray) -> float:
    return float(np.max(np.abs(sys.jacobian.T @ v - rhs), initial=0.0))


def solve_adjoint(sys: KktSystem, dl_dw: np.ndarray, tol: float = ADJOINT_TOL) -> np.ndarray:
    """Solve (dF/dw)' v = dL/dw.

    LU first; when the active rows are linearly dependent the minimum-norm
    least-squares solution is used instead.

    Raises:
        NumericalError: no solution within tolerance.
    """
    rhs = np.asarray(dl_dw, dtype=float).ravel()
    if rhs.size != sys.size:
        raise ValueError(f"dL/dw has {rhs.size} entries, expected {sys.size}")
    if not np.any(rhs):
        return np.zeros(sys.size)
    limit = tol * (1.0 + float(np.max(np.abs(rhs))))

    v = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        try:
            lu = sla.lu_factor(sys.jacobian.T, check_finite=False)
            v = sla.lu_solve(lu, rhs, check_finite=False)
        except (ValueError, np.linalg.LinAlgError):
            v = None
    if v is not None and np.all(np.isfinite(v)) and _residual(sys, v, rhs) <= limit:
        return v

    log.debug("adjoint: LU solve rejected, using least squares (size %d)", sys.size)
    v = sla.lstsq(sys.jacobian.T, rhs, lapack_driver="gelsd", check_finite=False)[0]
    res = _residual(sys, v, rhs)
    if not np.isfinite(res) or res > limit:
        raise NumericalError(
            f"singular KKT system: adjoint residual {res:.3g} with {sys.m_active} active "
            f"row(s) and {sys.degenerate} weakly active pair(s)")
    return v


def grad_wrt_forecast(sys: KktSystem, v: np.ndarray) -> np.ndarray:
    """grad_theta L = -(dF/dtheta)' v."""
    return -(sys.param_jacobian.T @ v)


def finite_diff_gradient(fn, d, step: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar function fn around d."""
    d = np.asarray(d, dtype=float)
    grad = np.zeros_like(d)
    for i in range(d.size):
        e = np.zeros_like(d)
        e[i] = step
        grad[i] = (fn(d + e) - fn(d - e)) / (2.0 * step)
    return grad


def regret_gradient(ev, weight: float = 1.0) -> np.ndarray:
    """Gradient of weight * delta-f in the forecast description.

    `ev` is a RegretEvaluation; the oracle term is a constant.
    """
    sol = ev.surrogate
    sys = build_kkt_system(sol.problem, sol.kkt)
    dl_dz = np.zeros(sol.problem.n)
    dl_dz[sol.program.first_stage_index] = weight * ev.gradient_x()
    return grad_wrt_forecast(sys, solve_adjoint(sys, sys.lift(dl_dz)))
