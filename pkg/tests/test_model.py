import unittest

import numpy as np

from mgdfl.errors import ConfigError, DimensionError
from mgdfl.model import (
    balance_residual, check_feasibility, check_schedule, day_ahead_cost, detect_simultaneity,
    ess_step, ess_trajectory, real_time_cost, realized_powers,
)
from mgdfl.objects import (
    KEYS, FirstStageSchedule, LoadTrajectory, MicrogridConfig, PriceSchedule, RecoursePlan,
    RenewableProfile,
)


def schedule(steps=1, **powers):
    z = np.zeros(steps)
    fields = {k: np.asarray(powers.get(k, z), dtype=float) for k in KEYS}
    return FirstStageSchedule(e_sch=powers.get("e_sch", np.full(steps + 1, 3000.0)), **fields)


def recourse(steps=1, up=None, down=None, **rest):
    z = np.zeros(steps)
    return RecoursePlan(
        up={k: np.asarray((up or {}).get(k, z), dtype=float) for k in KEYS},
        down={k: np.asarray((down or {}).get(k, z), dtype=float) for k in KEYS},
        e=rest.get("e", np.full(steps + 1, 3000.0)),
        p_dlc=rest.get("p_dlc", z), p_cur_wt=rest.get("p_cur_wt", z),
        p_cur_pv=rest.get("p_cur_pv", z),
    )


class LinkageAndCostTests(unittest.TestCase):

    def test_realized_powers(self):
        x = schedule(buy=[100.0])
        self.assertEqual(realized_powers(x, recourse())["buy"][0], 100.0)
        self.assertEqual(realized_powers(x, recourse(up={"buy": [50.0]}))["buy"][0], 150.0)
        x0 = schedule()
        self.assertEqual(realized_powers(x0, recourse(down={"sell": [30.0]}))["sell"][0], -30.0)

    def test_negative_realized_power_flagged(self):
        cfg = MicrogridConfig(horizon_steps=1)
        x = schedule()
        y = recourse(down={"buy": [30.0]}, up={"sell": [0.0]})
        load = LoadTrajectory([0.0])
        names = {v.constraint for v in check_feasibility(x, y, load, RenewableProfile.zeros(1), cfg)}
        self.assertIn("buy_limit", names)

    def test_horizon_mismatch(self):
        with self.assertRaises(DimensionError):
            realized_powers(schedule(steps=2), recourse(steps=1))

    def test_day_ahead_cost(self):
        prices = PriceSchedule.flat(1, buy=0.1, sell=0.05)
        self.assertEqual(day_ahead_cost(schedule(), prices)[1], 0.0)
        self.assertAlmostEqual(day_ahead_cost(schedule(buy=[1000.0]), prices)[1], 25.0)
        self.assertAlmostEqual(day_ahead_cost(schedule(sell=[1000.0]), prices)[1], -12.5)

    def test_real_time_cost(self):
        prices = PriceSchedule.flat(1, pi_up={"buy": 0.2, "sell": 0.0, "ch": 0.0, "dis": 0.0},
                                    c_dlc=0.5)
        self.assertEqual(real_time_cost(recourse(), prices), 0.0)
        self.assertAlmostEqual(real_time_cost(recourse(up={"buy": [200.0]}), prices), 10.0)
        self.assertAlmostEqual(real_time_cost(recourse(p_dlc=[100.0]), prices), 12.5)

    def test_zero_recourse_total_is_day_ahead(self):
        prices = PriceSchedule.flat(3)
        x = schedule(steps=3, buy=[100.0, 200.0, 0.0], sell=[0.0, 0.0, 50.0])
        total = day_ahead_cost(x, prices)[1] + real_time_cost(recourse(steps=3), prices)
        self.assertAlmostEqual(total, day_ahead_cost(x, prices)[1])


class EssTests(unittest.TestCase):

    def setUp(self):
        self.cfg = MicrogridConfig()

    def test_single_steps(self):
        self.assertEqual(ess_step(1000.0, 0.0, 0.0, self.cfg), 1000.0)
        self.assertAlmostEqual(ess_step(1000.0, 400.0, 0.0, self.cfg), 1095.0)
        self.assertAlmostEqual(ess_step(1000.0, 0.0, 380.0, self.cfg), 900.0)

    def test_trajectory_composes_steps(self):
        rng = np.random.default_rng(1)
        ch, dis = rng.uniform(0, 500, 96), rng.uniform(0, 500, 96)
        path = ess_trajectory(3000.0, ch, dis, self.cfg)
        e = 3000.0
        for t in range(96):
            e = ess_step(e, ch[t], dis[t], self.cfg)
            self.assertAlmostEqual(path[t + 1], e, delta=1e-9)


class BalanceTests(unittest.TestCase):

    def test_balance_examples(self):
        res = RenewableProfile([500.0], [0.0])
        zeros = RenewableProfile.zeros(1)
        self.assertEqual(balance_residual(schedule(), recourse(), LoadTrajectory([0.0]), zeros)[0], 0.0)
        self.assertEqual(balance_residual(schedule(), recourse(), LoadTrajectory([500.0]), res)[0], 0.0)
        x = schedule(buy=[100.0])
        self.assertEqual(balance_residual(x, recourse(), LoadTrajectory([600.0]), res)[0], 0.0)

    def test_scheduled_curtailment_counts(self):
        res = RenewableProfile([500.0], [0.0])
        x = FirstStageSchedule(buy=[0.0], sell=[0.0], ch=[0.0], dis=[0.0], e_sch=[3000.0, 3000.0],
                               cur_wt_sch=[100.0])
        self.assertEqual(balance_residual(x, recourse(), LoadTrajectory([400.0]), res)[0], 0.0)


class FeasibilityTests(unittest.TestCase):

    def setUp(self):
        self.cfg = MicrogridConfig(horizon_steps=2, dlc_ratio=0.3)
        self.res = RenewableProfile([200.0, 200.0], [0.0, 0.0])
        self.load = LoadTrajectory([1000.0, 1000.0])
        self.x = schedule(steps=2, buy=[800.0, 800.0])
        self.y = recourse(steps=2)

    def test_feasible_plan(self):
        self.assertEqual(check_feasibility(self.x, self.y, self.load, self.res, self.cfg), [])

    def test_dlc_violation_magnitude(self):
        y = recourse(steps=2, p_dlc=[500.0, 0.0], down={"buy": [0.0, 0.0]})
        x = schedule(steps=2, buy=[300.0, 800.0])
        found = [v for v in check_feasibility(x, y, self.load, self.res, self.cfg)
                 if v.constraint == "dlc_limit"]
        self.assertEqual(len(found), 1)
        self.assertEqual(found[0].step, 0)
        self.assertAlmostEqual(found[0].magnitude, 0.2 * 1000.0)

    def test_energy_limit(self):
        e = np.full(3, 3000.0)
        e[2] = self.cfg.e_ess_max + 1
        y = recourse(steps=2, e=e)
        names = {v.constraint for v in check_feasibility(self.x, y, self.load, self.res, self.cfg)}
        self.assertIn("ess_energy_limit", names)

    def test_single_perturbation_names_exactly_one_constraint(self):
        y = recourse(steps=2, up={"buy": [10.0, 0.0]})
        names = {v.constraint for v in check_feasibility(self.x, y, self.load, self.res, self.cfg)}
        self.assertEqual(names, {"power_balance"})
        cfg = MicrogridConfig(horizon_steps=2, reserve_up={"buy": 5.0, "sell": 0, "ch": 0, "dis": 0})
        y = recourse(steps=2, up={"buy": [10.0, 0.0]}, p_dlc=[0.0, 0.0])
        x = schedule(steps=2, buy=[790.0, 800.0])
        names = {v.constraint for v in check_feasibility(x, y, self.load, self.res, cfg)}
        self.assertEqual(names, {"reserve_up[buy]"})

    def test_schedule_check(self):
        x = schedule(steps=2, e_sch=[3000.0, 2000.0, 2000.0])
        names = {v.constraint for v in check_schedule(x, self.cfg)}
        self.assertEqual(names, {"ess_dynamics"})

    def test_simultaneity_detected(self):
        found = detect_simultaneity({"buy": np.array([10.0, 0.0]), "sell": np.array([5.0, 0.0]),
                                     "ch": np.zeros(2), "dis": np.zeros(2)})
        self.assertEqual(found, [(0, "buy/sell")])


class ConfigValidationTests(unittest.TestCase):

    def test_rejects_bad_efficiency(self):
        with self.assertRaises(ConfigError):
            MicrogridConfig(eta_ch=1.5)

    def test_rejects_initial_energy_out_of_range(self):
        with self.assertRaises(ConfigError):
            MicrogridConfig(e_init=7000.0)


if __name__ == "__main__":
    unittest.main()
