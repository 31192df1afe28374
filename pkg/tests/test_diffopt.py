import unittest

import numpy as np
import numpy.testing as npt

from mgdfl.diffopt import (
    KktSystem, build_kkt_system, finite_diff_gradient, grad_wrt_forecast, kkt_residual,
    regret_gradient, solve_adjoint,
)
from mgdfl.errors import NumericalError
from mgdfl.objects import ForecastDescription
from mgdfl.qp import KktPoint, QpProblem, solve_qp
from mgdfl.surrogate import evaluate_fixed, evaluate_regret, solve_oracle, solve_surrogate
from tests.helpers import make_microgrid


def point(z, nu=(), mu=()):
    return KktPoint(z=np.asarray(z, dtype=float), nu=np.asarray(nu, dtype=float),
                    mu=np.asarray(mu, dtype=float), status="optimal", residuals={}, objective=0.0)


def clipped_problem(theta):
    """min 1/2|z|^2 - 2 z0 - z1  s.t.  z <= theta."""
    return QpProblem(H=np.eye(2), g=[-2.0, -1.0], A_in=np.eye(2), b_in=np.asarray(theta, float),
                     P_in=np.eye(2), theta=np.asarray(theta, float), b0_in=np.zeros(2))


class ResidualTests(unittest.TestCase):

    def test_zero_at_optimum(self):
        p = clipped_problem([1.0, 5.0])
        kkt = solve_qp(p)
        self.assertLess(np.max(np.abs(kkt_residual(kkt, p))), 1e-6)

    def test_stationarity_shift(self):
        h = np.diag([2.0, 3.0])
        p = QpProblem(H=h, g=[-2.0, 3.0])
        z_star = np.array([1.0, -1.0])
        delta = np.array([0.1, -0.2])
        res = kkt_residual(point(z_star + delta), p)
        npt.assert_allclose(res, h @ delta, atol=1e-12)

    def test_no_multipliers_no_complementarity(self):
        p = clipped_problem([1.0, 5.0])
        res = kkt_residual(point([0.3, 0.2], mu=[0.0, 0.0]), p)
        npt.assert_array_equal(res[2:], 0.0)


class AdjointTests(unittest.TestCase):

    def test_scalar(self):
        sys = KktSystem(jacobian=np.array([[2.0]]), param_jacobian=np.zeros((1, 0)),
                        active_mask=np.zeros(0, bool), n=1, m_eq=0)
        npt.assert_allclose(solve_adjoint(sys, [1.0]), [0.5])

    def test_zero_rhs(self):
        sys = KktSystem(jacobian=np.eye(3), param_jacobian=np.zeros((3, 1)),
                        active_mask=np.zeros(0, bool), n=3, m_eq=0)
        npt.assert_array_equal(solve_adjoint(sys, np.zeros(3)), 0.0)

    def test_random_system(self):
        rng = np.random.default_rng(3)
        jac = rng.normal(size=(6, 6)) + 6 * np.eye(6)
        sys = KktSystem(jacobian=jac, param_jacobian=np.zeros((6, 1)),
                        active_mask=np.zeros(0, bool), n=6, m_eq=0)
        rhs = rng.normal(size=6)
        v = solve_adjoint(sys, rhs)
        self.assertLessEqual(np.max(np.abs(jac.T @ v - rhs)), 1e-8 * (1 + np.max(np.abs(rhs))))

    def test_dependent_rows_use_least_squares(self):
        jac = np.array([[1.0, 0.0], [1.0, 0.0]])
        sys = KktSystem(jacobian=jac, param_jacobian=np.zeros((2, 1)),
                        active_mask=np.zeros(0, bool), n=2, m_eq=0)
        v = solve_adjoint(sys, [2.0, 0.0])
        npt.assert_allclose(v, [1.0, 1.0], atol=1e-10)

    def test_inconsistent_system(self):
        sys = KktSystem(jacobian=np.zeros((2, 2)), param_jacobian=np.zeros((2, 1)),
                        active_mask=np.zeros(0, bool), n=2, m_eq=0)
        with self.assertRaises(NumericalError):
            solve_adjoint(sys, [1.0, 0.0])

    def test_size_mismatch(self):
        sys = KktSystem(jacobian=np.eye(2), param_jacobian=np.zeros((2, 1)),
                        active_mask=np.zeros(0, bool), n=2, m_eq=0)
        with self.assertRaises(ValueError):
            sys.lift(np.ones(3))


class ForecastGradientTests(unittest.TestCase):

    def test_clipped_coordinates(self):
        # z0 sits on its bound, z1 is interior
        p = clipped_problem([1.0, 5.0])
        kkt = solve_qp(p)
        sys = build_kkt_system(p, kkt)
        self.assertEqual(sys.m_active, 1)
        grad = grad_wrt_forecast(sys, solve_adjoint(sys, sys.lift([1.0, 1.0])))
        npt.assert_allclose(grad, [1.0, 0.0], atol=1e-6)

    def test_zero_adjoint(self):
        p = clipped_problem([1.0, 5.0])
        sys = build_kkt_system(p, solve_qp(p))
        npt.assert_array_equal(grad_wrt_forecast(sys, np.zeros(sys.size)), 0.0)

    def test_finite_differences(self):
        npt.assert_allclose(finite_diff_gradient(lambda d: float(d @ d), [1.0, -2.0]),
                            [2.0, -4.0], atol=1e-8)
        npt.assert_array_equal(finite_diff_gradient(lambda d: 3.0, np.ones(4)), 0.0)


class RegretGradientTests(unittest.TestCase):

    def setUp(self):
        self.mg = make_microgrid(steps=2, wt=300.0, pv=100.0)
        self.realized = np.array([1200.0, 900.0])
        median = self.realized * np.array([1.1, 0.95])
        self.d = ForecastDescription(0.85 * median, median, 1.15 * median)
        self.oracle = solve_oracle(self.realized, self.mg)

    def fixed_value(self, vec):
        sol = solve_surrogate(vec, self.mg)
        return evaluate_fixed(sol.first_stage, self.realized, self.mg).value

    def test_matches_finite_differences(self):
        ev = evaluate_regret(self.d, self.realized, self.mg, oracle=self.oracle)
        self.assertGreater(ev.delta, 0.0)
        grad = regret_gradient(ev)
        fd = finite_diff_gradient(self.fixed_value, self.d.as_vector(), step=0.5)
        self.assertEqual(grad.shape, (6,))
        self.assertLessEqual(np.linalg.norm(grad - fd), 1e-3 * np.linalg.norm(fd) + 1e-6)

    def test_weight_scales_gradient(self):
        ev = evaluate_regret(self.d, self.realized, self.mg, oracle=self.oracle)
        npt.assert_allclose(regret_gradient(ev, weight=0.5), 0.5 * regret_gradient(ev),
                            rtol=1e-9, atol=1e-12)


if __name__ == "__main__":
    unittest.main()
