import json
import unittest
from unittest import mock

import numpy as np

from mgdfl.errors import ConfigError, NumericalError, RecourseInfeasibleError
from mgdfl.objects import UncertaintySet
from mgdfl.tsro import (
    brute_force_worst_case, second_stage_value, solve_tsro_ccg, solve_tsro_vertex_enumeration,
    worst_case_ascent,
)
from tests.helpers import grid_schedule, make_microgrid, random_microgrid

NO_SELL_RESERVE = {"buy": 1500.0, "sell": 0.0, "ch": 1100.0, "dis": 1100.0}


class SecondStageTests(unittest.TestCase):

    def test_no_recourse_at_nominal(self):
        rng = np.random.default_rng(0)
        for _ in range(3):
            mg = random_microgrid(rng, steps=4)
            load = rng.uniform(300, 2500, 4)
            cost, plan = second_stage_value(grid_schedule(mg, load), load, mg)
            self.assertAlmostEqual(cost, 0.0, places=7)
            self.assertTrue(plan.is_zero(tol=1e-5))

    def test_upward_deviation_bought_back(self):
        mg = make_microgrid(steps=1, ess=False)
        x = grid_schedule(mg, [1000.0])
        cost, plan = second_stage_value(x, [1100.0], mg)
        self.assertAlmostEqual(cost, 6.25, places=6)
        self.assertAlmostEqual(plan.up["buy"][0], 100.0, places=5)

    def test_surplus_curtailed(self):
        mg = make_microgrid(steps=1, wt=800.0, ess=False, reserve_up=NO_SELL_RESERVE)
        x = grid_schedule(mg, [500.0])
        cost, plan = second_stage_value(x, [200.0], mg)
        self.assertAlmostEqual(plan.p_cur_wt[0], 300.0, places=5)
        self.assertAlmostEqual(cost, 11.25, places=6)

    def test_infeasible_realization_diagnosed(self):
        mg = make_microgrid(steps=1, ess=False)
        x = grid_schedule(mg, [1000.0])
        with self.assertRaises(RecourseInfeasibleError) as ctx:
            second_stage_value(x, [4000.0], mg)
        diag = ctx.exception.diagnostic
        self.assertEqual(diag.constraint, "power_balance")
        self.assertEqual(diag.direction, "shortage")
        self.assertAlmostEqual(diag.shortfall_kw, 700.0, places=4)
        self.assertIn("reserve_up[buy]", diag.binding)
        self.assertIn("dlc_limit", diag.binding)

    def test_emergency_mode_absorbs_large_deviation(self):
        mg = make_microgrid(steps=1, ess=False)
        x = grid_schedule(mg, [1000.0])
        cost, _ = second_stage_value(x, [4000.0], mg, emergency=True)
        self.assertGreater(cost, 0.0)


class WorstCaseTests(unittest.TestCase):

    def test_degenerate_box(self):
        mg = make_microgrid(steps=3, ess=False)
        load = np.array([500.0, 700.0, 900.0])
        x = grid_schedule(mg, load)
        u, value = worst_case_ascent(x, UncertaintySet.degenerate(load), mg)
        np.testing.assert_allclose(u.values, load)
        self.assertAlmostEqual(value, 0.0, places=7)

    def test_ascent_matches_enumeration(self):
        rng = np.random.default_rng(7)
        for _ in range(4):
            mg = random_microgrid(rng, steps=4)
            nominal = rng.uniform(500, 2000, 4)
            uset = UncertaintySet(0.85 * nominal, 1.15 * nominal, nominal)
            x = grid_schedule(mg, nominal)
            _, v_ascent = worst_case_ascent(x, uset, mg, seed=1)
            _, v_exact = brute_force_worst_case(x, uset, mg)
            self.assertAlmostEqual(v_ascent, v_exact, delta=1e-6 * max(1.0, abs(v_exact)))

    def test_parallel_flips_agree(self):
        rng = np.random.default_rng(11)
        mg = random_microgrid(rng, steps=4)
        nominal = rng.uniform(500, 2000, 4)
        uset = UncertaintySet(0.9 * nominal, 1.1 * nominal, nominal)
        x = grid_schedule(mg, nominal)
        _, serial = worst_case_ascent(x, uset, mg, workers=1)
        _, parallel = worst_case_ascent(x, uset, mg, workers=3)
        self.assertAlmostEqual(serial, parallel, places=6)

    def test_shortage_only_box_picks_upper_vertex(self):
        mg = make_microgrid(steps=3, ess=False)
        lower = np.array([800.0, 900.0, 1000.0])
        uset = UncertaintySet(lower, lower + 200.0, lower)
        u, value = worst_case_ascent(grid_schedule(mg, lower), uset, mg)
        np.testing.assert_allclose(u.values, uset.upper)
        self.assertAlmostEqual(value, 3 * 200.0 * 0.25 * 0.25, places=6)

    def test_interior_points_do_not_exceed_worst_case(self):
        rng = np.random.default_rng(5)
        mg = random_microgrid(rng, steps=3)
        nominal = rng.uniform(500, 2000, 3)
        uset = UncertaintySet(0.8 * nominal, 1.2 * nominal, nominal)
        x = grid_schedule(mg, nominal)
        _, worst = brute_force_worst_case(x, uset, mg)
        for _ in range(10):
            u = rng.uniform(uset.lower, uset.upper)
            self.assertLessEqual(second_stage_value(x, u, mg)[0], worst + 1e-6)

    def test_enumeration_horizon_limit(self):
        mg = make_microgrid(steps=13, ess=False)
        load = np.full(13, 1000.0)
        uset = UncertaintySet(0.9 * load, 1.1 * load)
        with self.assertRaises(ConfigError):
            brute_force_worst_case(grid_schedule(mg, load), uset, mg)
        with self.assertRaises(ConfigError):
            solve_tsro_vertex_enumeration(uset, mg)


class CcgTests(unittest.TestCase):

    def test_degenerate_set_converges_immediately(self):
        mg = make_microgrid(steps=3, ess=False)
        load = np.array([500.0, 700.0, 900.0])
        sol = solve_tsro_ccg(UncertaintySet.degenerate(load), mg)
        self.assertEqual(sol.iterations, 1)
        self.assertAlmostEqual(sol.worst_case_cost, 0.1 * 0.25 * load.sum(), places=6)
        self.assertAlmostEqual(sol.day_ahead_cost, sol.worst_case_cost, places=6)

    def test_matches_vertex_enumeration(self):
        rng = np.random.default_rng(3)
        for _ in range(3):
            mg = random_microgrid(rng, steps=3)
            nominal = rng.uniform(500, 2000, 3)
            uset = UncertaintySet(0.8 * nominal, 1.2 * nominal, nominal)
            ccg = solve_tsro_ccg(uset, mg, tol=1e-9)
            exact = solve_tsro_vertex_enumeration(uset, mg)
            self.assertAlmostEqual(ccg.worst_case_cost, exact.worst_case_cost,
                                   delta=1e-6 * max(1.0, abs(exact.worst_case_cost)))

    def test_enumerate_inner_solver(self):
        rng = np.random.default_rng(4)
        mg = random_microgrid(rng, steps=3)
        nominal = rng.uniform(500, 2000, 3)
        uset = UncertaintySet(0.8 * nominal, 1.2 * nominal, nominal)
        a = solve_tsro_ccg(uset, mg, tol=1e-9)
        b = solve_tsro_ccg(uset, mg, tol=1e-9, inner="enumerate")
        self.assertAlmostEqual(a.worst_case_cost, b.worst_case_cost,
                               delta=1e-6 * max(1.0, abs(b.worst_case_cost)))

    def test_bounds_are_monotone(self):
        rng = np.random.default_rng(9)
        mg = random_microgrid(rng, steps=4)
        nominal = rng.uniform(500, 2000, 4)
        sol = solve_tsro_ccg(UncertaintySet(0.8 * nominal, 1.2 * nominal, nominal), mg, tol=1e-9)
        self.assertTrue(np.all(np.diff(sol.lower_bounds) >= -1e-9))
        self.assertTrue(np.all(np.diff(sol.upper_bounds) <= 1e-9))
        self.assertLessEqual(sol.lower_bounds[-1], sol.upper_bounds[-1] + 1e-6)

    def test_pool_and_worst_case_lie_in_the_set(self):
        rng = np.random.default_rng(9)
        mg = random_microgrid(rng, steps=4)
        nominal = rng.uniform(500, 2000, 4)
        uset = UncertaintySet(0.8 * nominal, 1.2 * nominal, nominal)
        sol = solve_tsro_ccg(uset, mg, tol=1e-9)
        self.assertTrue(all(uset.contains(u) for u in sol.scenario_pool))
        self.assertTrue(uset.contains(sol.worst_case))
        self.assertFalse(uset.contains(1.3 * nominal))

    def test_schedule_checked_for_simultaneous_exchange(self):
        mg = make_microgrid(steps=2, ess=False)
        with mock.patch("mgdfl.tsro.detect_simultaneity", return_value=[(1, "buy/sell")]) as detect:
            sol = solve_tsro_ccg(UncertaintySet.degenerate([500.0, 600.0]), mg)
        np.testing.assert_array_equal(detect.call_args.args[0]["buy"], sol.x.buy)
        self.assertEqual(sol.simultaneous, [(1, "buy/sell")])
        self.assertEqual(sol.to_dict()["simultaneous"], [[1, "buy/sell"]])

    def test_wider_box_costs_more(self):
        rng = np.random.default_rng(12)
        mg = random_microgrid(rng, steps=3)
        nominal = rng.uniform(500, 2000, 3)
        costs = [solve_tsro_vertex_enumeration(
            UncertaintySet((1 - w) * nominal, (1 + w) * nominal, nominal), mg).worst_case_cost
            for w in (0.0, 0.05, 0.1, 0.2)]
        self.assertTrue(np.all(np.diff(costs) >= -1e-6))

    def test_iteration_limit(self):
        mg = make_microgrid(steps=2, ess=False)
        lower = np.array([800.0, 900.0])
        uset = UncertaintySet(lower, lower + 300.0, lower)
        with self.assertRaises(NumericalError):
            solve_tsro_ccg(uset, mg, max_iter=1)
        sol = solve_tsro_ccg(uset, mg)
        self.assertEqual(sol.iterations, 2)

    def test_unknown_inner_solver(self):
        mg = make_microgrid(steps=2, ess=False)
        with self.assertRaises(ConfigError):
            solve_tsro_ccg(UncertaintySet.degenerate([500.0, 600.0]), mg, inner="milp")

    def test_to_dict_is_json(self):
        mg = make_microgrid(steps=2, ess=False)
        sol = solve_tsro_ccg(UncertaintySet.degenerate([500.0, 600.0]), mg)
        data = json.loads(json.dumps(sol.to_dict()))
        self.assertEqual(data["iterations"], 1)
        self.assertEqual(len(data["schedule"]["buy"]), 2)
        self.assertEqual(data["scenario_pool"], [[500.0, 600.0]])


if __name__ == "__main__":
    unittest.main()
