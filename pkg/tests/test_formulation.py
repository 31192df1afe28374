import unittest

import numpy as np
import numpy.testing as npt

from mgdfl.formulation import (
    Affine, ProblemBuilder, add_first_stage, add_nominal, add_recourse, day_ahead_coefficients,
    fixed_first_stage, load_param, recourse_cost_coefficients, schedule_from,
)
from mgdfl.model import check_feasibility, check_schedule, day_ahead_cost, real_time_cost
from mgdfl.network import ieee_feeder, lindistflow_constraints
from mgdfl.objects import LoadTrajectory
from mgdfl.qp import solve_lp
from mgdfl.tsro import second_stage_value
from tests.helpers import grid_schedule, make_microgrid


class AffineTests(unittest.TestCase):

    def test_value(self):
        e = Affine.var([0, 1], 2.0) + Affine.param([0, 0], 3.0) - 1.0
        npt.assert_allclose(e.value(np.array([1.0, 2.0]), np.array([4.0])), [13.0, 15.0])

    def test_scaling_and_slicing(self):
        e = (3.0 * Affine.var([0, 1, 2]))[1:]
        self.assertEqual(e.rows, 2)
        npt.assert_allclose(e.value(np.array([1.0, 2.0, 3.0])), [6.0, 9.0])

    def test_numpy_on_the_left(self):
        e = np.array([1.0, 2.0]) - Affine.var([0, 1])
        npt.assert_allclose(e.value(np.array([1.0, 1.0])), [0.0, 1.0])

    def test_row_mismatch(self):
        with self.assertRaises(ValueError):
            Affine.var([0]) + Affine.var([0, 1])


class BuilderTests(unittest.TestCase):

    def setUp(self):
        b = ProblemBuilder(n_params=1)
        x = b.add_var("x", 2, 0.0, 5.0)
        b.add_eq(Affine.var(x)[0] + Affine.var(x)[1] - Affine.param([0]), "sum")
        b.add_cost(x, [1.0, 2.0])
        self.builder = b

    def test_parametric_right_hand_side(self):
        p = self.builder.build(np.array([3.0]))
        npt.assert_allclose(p.A_eq.toarray(), [[1.0, 1.0]])
        npt.assert_allclose(p.b_eq, [3.0])
        npt.assert_allclose(p.with_params([4.0]).b_eq, [4.0])
        self.assertEqual(p.eq_labels, ["sum[0]"])

    def test_bound_rows(self):
        p = self.builder.build(np.array([3.0]))
        self.assertEqual(p.in_labels, ["lb:x[0]", "lb:x[1]", "ub:x[0]", "ub:x[1]"])
        npt.assert_allclose(p.b_in, [0.0, 0.0, 5.0, 5.0])

    def test_regularization(self):
        p = self.builder.build(np.array([3.0]), reg=0.5)
        npt.assert_allclose(p.H.toarray(), 0.5 * np.eye(2))

    def test_solves(self):
        kkt = solve_lp(self.builder.build(np.array([3.0])))
        npt.assert_allclose(kkt.z, [3.0, 0.0], atol=1e-8)
        self.assertAlmostEqual(kkt.objective, 3.0)


class MicrogridBlockTests(unittest.TestCase):

    def test_nominal_dispatch_is_valid(self):
        mg = make_microgrid(steps=4, wt=300.0, pv=200.0)
        load = np.array([800.0, 1200.0, 400.0, 900.0])
        b = ProblemBuilder(n_params=4)
        fs = add_first_stage(b, mg)
        add_nominal(b, fs, mg, load_param(4, 0))
        b.add_cost(*day_ahead_coefficients(fs, mg))
        p = b.build(load)
        self.assertIn("x.ess_initial[0]", p.eq_labels)
        kkt = solve_lp(p)
        x = schedule_from(kkt.z, fs)
        self.assertEqual(check_schedule(x, mg.config, tol=1e-5), [])
        self.assertAlmostEqual(day_ahead_cost(x, mg.prices)[1], kkt.objective, places=6)

    def test_recourse_plan_is_feasible_and_priced(self):
        mg = make_microgrid(steps=4, wt=300.0, pv=200.0)
        load = np.array([800.0, 1200.0, 400.0, 900.0])
        x = grid_schedule(mg, load)
        for factor in (0.9, 1.0, 1.15):
            u = LoadTrajectory(load * factor)
            cost, plan = second_stage_value(x, u, mg)
            self.assertEqual(check_feasibility(x, plan, u, mg.renewables, mg.config, tol=1e-5), [])
            self.assertAlmostEqual(real_time_cost(plan, mg.prices), cost, places=6)

    def test_megawatt_scale_gives_same_cost(self):
        mg = make_microgrid(steps=3, wt=200.0)
        load = np.array([900.0, 1100.0, 700.0])
        x = grid_schedule(mg, load)
        u = load * np.array([1.1, 0.85, 1.2])
        values = []
        for scale in (1.0, 1000.0):
            b = ProblemBuilder(n_params=3)
            rb = add_recourse(b, fixed_first_stage(x, scale), mg, load_param(3, 0, scale), scale=scale)
            b.add_cost(*recourse_cost_coefficients(rb))
            values.append(solve_lp(b.build(u)).objective)
        self.assertAlmostEqual(values[0], values[1], delta=1e-6 * max(1.0, abs(values[0])))

    def test_voltage_rows(self):
        net = lindistflow_constraints(ieee_feeder("ieee33"))
        mg = make_microgrid(steps=2, pv=400.0, network=net)
        load = np.array([1800.0, 2200.0])
        x = grid_schedule(mg, load)
        b = ProblemBuilder(n_params=2)
        add_recourse(b, fixed_first_stage(x), mg, load_param(2, 0))
        labels = b.build(load).in_labels
        self.assertTrue(any(".v_low@" in name for name in labels))
        self.assertFalse(any("@1[" in name for name in labels))
        u = LoadTrajectory(load * 1.1)
        _, plan = second_stage_value(x, u, mg)
        found = check_feasibility(x, plan, u, mg.renewables, mg.config, tol=1e-5, network=net)
        self.assertEqual(found, [])


if __name__ == "__main__":
    unittest.main()
