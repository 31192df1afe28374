import unittest

import numpy as np
import numpy.testing as npt
import scipy.sparse as sp

from mgdfl.errors import InfeasibleError, NumericalError
from mgdfl.qp import (
    INFEASIBLE, OPTIMAL, QpProblem, fix_variables, kkt_residuals, solve, solve_lp, solve_qp,
)


def box_rows(n, lo, hi):
    """Inequality rows for lo <= z <= hi."""
    eye = np.eye(n)
    return np.vstack([-eye, eye]), np.concatenate([-np.full(n, lo), np.full(n, hi)])


def random_qp(rng, n=10, m_eq=2, m_in=6):
    m = rng.normal(size=(n, n))
    h = m @ m.T + 0.5 * np.eye(n)
    g = rng.normal(size=n)
    a_eq = rng.normal(size=(m_eq, n))
    z0 = rng.uniform(-0.5, 0.5, size=n)
    b_eq = a_eq @ z0
    a_in = rng.normal(size=(m_in, n))
    b_in = a_in @ z0 + rng.uniform(0.1, 1.0, size=m_in)
    a_box, b_box = box_rows(n, -2.0, 2.0)
    return QpProblem(H=h, g=g, A_eq=a_eq, b_eq=b_eq,
                     A_in=np.vstack([a_in, a_box]), b_in=np.concatenate([b_in, b_box]))


def reference_solution(p, iters=20000):
    """Independent SLSQP solve run to a tight tolerance."""
    from scipy.optimize import minimize

    h = p.H.toarray()
    cons = [{"type": "eq", "fun": lambda z: p.A_eq @ z - p.b_eq, "jac": lambda z: p.A_eq.toarray()},
            {"type": "ineq", "fun": lambda z: p.b_in - p.A_in @ z, "jac": lambda z: -p.A_in.toarray()}]
    res = minimize(lambda z: 0.5 * z @ h @ z + p.g @ z, np.zeros(p.n),
                   jac=lambda z: h @ z + p.g, constraints=cons, method="SLSQP",
                   options={"ftol": 1e-14, "maxiter": iters})
    return res.x


class SolveQpTests(unittest.TestCase):

    def test_unconstrained(self):
        kkt = solve_qp(QpProblem(H=np.eye(1), g=np.zeros(1)))
        self.assertEqual(kkt.status, OPTIMAL)
        npt.assert_allclose(kkt.z, [0.0], atol=1e-10)
        self.assertLessEqual(max(kkt.residuals.values()), 1e-8)

    def test_single_active_bound(self):
        kkt = solve_qp(QpProblem(H=np.eye(1), g=[-1.0], A_in=[[1.0]], b_in=[0.5]))
        self.assertEqual(kkt.status, OPTIMAL)
        npt.assert_allclose(kkt.z, [0.5], atol=1e-7)
        npt.assert_allclose(kkt.mu, [0.5], atol=1e-7)
        self.assertEqual(kkt.nu.size, 0)

    def test_equality_multiplier_sign(self):
        kkt = solve_qp(QpProblem(H=np.eye(2), g=np.zeros(2), A_eq=[[1.0, 1.0]], b_eq=[1.0]))
        npt.assert_allclose(kkt.z, [0.5, 0.5], atol=1e-8)
        npt.assert_allclose(kkt.nu, [-0.5], atol=1e-8)

    def test_random_instances_match_reference_and_duality(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            p = random_qp(rng)
            kkt = solve_qp(p)
            self.assertEqual(kkt.status, OPTIMAL)
            ref = reference_solution(p)
            npt.assert_allclose(kkt.z, ref, atol=1e-5)
            gi = p.A_in @ kkt.z - p.b_in
            self.assertLessEqual(np.max(np.abs(kkt.mu * gi)), 1e-7)
            self.assertTrue(np.all(kkt.mu >= 0))
            # dual objective of a convex QP
            h = p.H.toarray()
            dual = (-0.5 * kkt.z @ h @ kkt.z - p.b_eq @ kkt.nu - p.b_in @ kkt.mu)
            self.assertLessEqual(abs(kkt.objective - dual), 1e-6 * (1 + abs(kkt.objective)))

    def test_infeasible_detected(self):
        p = QpProblem(H=np.eye(1), g=np.zeros(1), A_in=[[1.0], [-1.0]], b_in=[-1.0, 0.0])
        kkt = solve_qp(p)
        self.assertEqual(kkt.status, INFEASIBLE)
        with self.assertRaises(InfeasibleError):
            kkt.raise_for_status("toy")

    def test_max_iter_raises_numerical(self):
        p = random_qp(np.random.default_rng(3))
        kkt = solve_qp(p, max_iter=1)
        self.assertNotEqual(kkt.status, OPTIMAL)
        with self.assertRaises((NumericalError, InfeasibleError)):
            kkt.raise_for_status()

    def test_repeated_equality_rows(self):
        a, b = box_rows(2, -5.0, 5.0)
        p = QpProblem(H=np.diag([1e-3, 1e-3]), g=[1.0, 1.0],
                      A_eq=[[1.0, 0.0], [1.0, 0.0]], b_eq=[0.0, 0.0], A_in=a, b_in=b)
        kkt = solve_qp(p)
        self.assertEqual(kkt.status, OPTIMAL)
        npt.assert_allclose(kkt.z, [0.0, -5.0], atol=1e-6)


class SolveLpTests(unittest.TestCase):

    def test_lower_bound_active(self):
        a, b = box_rows(1, 0.0, 1.0)
        kkt = solve_lp(QpProblem(H=sp.csr_matrix((1, 1)), g=[1.0], A_in=a, b_in=b))
        self.assertEqual(kkt.status, OPTIMAL)
        npt.assert_allclose(kkt.z, [0.0], atol=1e-9)
        npt.assert_allclose(kkt.mu, [1.0, 0.0], atol=1e-9)

    def test_upper_bound_active(self):
        kkt = solve_lp(QpProblem(H=np.zeros((1, 1)), g=[-1.0], A_in=[[1.0], [-1.0]], b_in=[3.0, 0.0]))
        npt.assert_allclose(kkt.z, [3.0], atol=1e-9)
        self.assertAlmostEqual(kkt.objective, -3.0)

    def test_constant_objective(self):
        a, b = box_rows(2, 0.0, 1.0)
        kkt = solve_lp(QpProblem(H=np.zeros((2, 2)), g=np.zeros(2), A_in=a, b_in=b))
        self.assertEqual(kkt.status, OPTIMAL)
        self.assertTrue(np.all(kkt.z >= -1e-9) and np.all(kkt.z <= 1 + 1e-9))

    def test_infeasible_lp(self):
        kkt = solve_lp(QpProblem(H=np.zeros((1, 1)), g=[1.0], A_in=[[1.0], [-1.0]], b_in=[-1.0, 0.0]))
        self.assertEqual(kkt.status, INFEASIBLE)

    def test_failed_program_dumped_at_debug(self):
        p = QpProblem(H=np.zeros((1, 1)), g=[1.0], A_in=[[1.0], [-1.0]], b_in=[-1.0, 0.0])
        with self.assertLogs("mgdfl.qp", level="DEBUG") as logs:
            solve(p)
        self.assertTrue(any("# qp n=1 m_eq=0 m_in=2" in line for line in logs.output))

    def test_lp_duals_match_interior_point(self):
        rng = np.random.default_rng(11)
        n = 6
        a, b = box_rows(n, 0.0, 1.0)
        a_eq = np.ones((1, n))
        p = QpProblem(H=np.zeros((n, n)), g=rng.uniform(1, 2, n), A_eq=a_eq, b_eq=[2.5], A_in=a, b_in=b)
        lp = solve(p)
        ipm = solve_qp(p.with_damping(1e-9))
        self.assertAlmostEqual(lp.objective, ipm.objective, places=6)
        npt.assert_allclose(lp.nu, ipm.nu, atol=1e-5)
        self.assertLessEqual(kkt_residuals(p, lp.z, lp.nu, lp.mu)["stationarity"], 1e-8)


class FixVariablesTests(unittest.TestCase):

    def test_fixing_matches_constrained_solve(self):
        p = random_qp(np.random.default_rng(5), n=6, m_eq=1, m_in=3)
        full = solve_qp(p)
        idx = np.array([0, 2])
        reduced, constant, fix = fix_variables(p, idx, full.z[idx])
        sub = solve_qp(reduced)
        self.assertEqual(sub.status, OPTIMAL)
        npt.assert_allclose(fix.expand(sub.z), full.z, atol=1e-6)
        self.assertAlmostEqual(sub.objective, full.objective, places=6)
        self.assertAlmostEqual(reduced.constant, constant)

    def test_fixed_only_rows_dropped_or_rejected(self):
        p = QpProblem(H=np.eye(2), g=np.zeros(2), A_in=[[1.0, 0.0], [1.0, 1.0]], b_in=[1.0, 3.0])
        reduced, _, fix = fix_variables(p, [0], [0.5])
        self.assertEqual(reduced.m_in, 1)
        npt.assert_array_equal(fix.in_rows, [1])
        npt.assert_allclose(reduced.b_in, [2.5])
        with self.assertRaises(InfeasibleError):
            fix_variables(p, [0], [2.0])

    def test_parameters_survive_fixing(self):
        p = QpProblem(H=np.eye(2), g=np.zeros(2), A_eq=[[1.0, 1.0]], b_eq=[1.0],
                      P_eq=[[1.0]], theta=[1.0])
        reduced, _, _ = fix_variables(p, [0], [0.25])
        moved = reduced.with_params([2.0])
        npt.assert_allclose(moved.b_eq, [1.75])


if __name__ == "__main__":
    unittest.main()
