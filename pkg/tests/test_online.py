import math
import unittest
from unittest import mock

import numpy as np
import pandas as pd
import torch

from mgdfl.errors import ConfigError, DimensionError, NumericalError
from mgdfl.forecast import PredictionInterval, QuantileNet
from mgdfl.online.benchmark import DayJob, run_benchmark, summarize, summarize_subsets, timing_table
from mgdfl.online.policies import FroPolicy, RtroPolicy, StaticPolicy, create_policy
from mgdfl.online.policy import TriggerInputs
from mgdfl.online.simulator import (
    FixedForecaster, Forecaster, ModelForecaster, RtroConfig, combined_indicator,
    cost_indicator, grid_indicator, indicators, run_day, trigger,
)
from mgdfl.online.world import DayState
from mgdfl.protocol import OPERATION_COLUMNS, SERIES_COLUMNS
from mgdfl.tsro import TsroConfig
from tests.helpers import grid_schedule, make_microgrid

LOAD = np.array([800.0, 1000.0, 1200.0, 900.0])


def band(load, width):
    load = np.asarray(load, dtype=float)
    return PredictionInterval((1 - width) * load, load.copy(), (1 + width) * load)


class BrokenForecaster(Forecaster):

    def interval(self, t, observed):
        return band(LOAD[:1], 0.1)


class FailingResolves(TsroConfig):
    """Solves the initial dispatch, then fails every re-solve."""

    def __post_init__(self):
        super().__post_init__()
        self.calls = 0

    def solve(self, uset, mg, seed=0):
        self.calls += 1
        if self.calls > 1:
            raise NumericalError("no convergence")
        return super().solve(uset, mg, seed=seed)


class IndicatorTests(unittest.TestCase):

    def test_hand_values(self):
        self.assertAlmostEqual(grid_indicator(1200.0, 1000.0, 5000.0), 0.04)
        self.assertAlmostEqual(cost_indicator(110.0, 100.0, 0.0), 0.1)
        self.assertAlmostEqual(cost_indicator(0.0, 0.0, 1e-6), 0.0)
        cfg = RtroConfig(eps_g=0.02, eps_c=0.05)
        self.assertAlmostEqual(combined_indicator(0.04, 0.1, cfg), 2.0)
        self.assertAlmostEqual(combined_indicator(0.01, 0.1, cfg), 2.0)
        self.assertAlmostEqual(combined_indicator(0.01, 0.0, cfg), 0.5)

    def test_trigger_rule(self):
        cfg = RtroConfig(eps_g=0.02, eps_c=0.05, dtau_min=2, dtau_max=5)
        self.assertEqual(trigger(0.04, 0.0, 2, cfg), 1)
        # inside the minimum window
        self.assertEqual(trigger(0.04, 0.0, 1, cfg), 0)
        # psi exactly 1 does not fire
        self.assertEqual(trigger(0.02, 0.0, 3, cfg), 0)
        # staleness bound
        self.assertEqual(trigger(0.0, 0.0, 5, cfg), 1)

    def test_infinite_thresholds_disable(self):
        cfg = RtroConfig(eps_g=math.inf, eps_c=math.inf, dtau_max=math.inf)
        self.assertEqual(combined_indicator(10.0, 10.0, cfg), 0.0)
        self.assertEqual(trigger(math.inf, math.inf, 50, cfg), 0)
        only_cost = RtroConfig(eps_g=math.inf, eps_c=0.05)
        self.assertEqual(trigger(1.0, 0.1, 1, only_cost), 1)
        self.assertEqual(trigger(1.0, 0.01, 1, only_cost), 0)

    def test_config_validation(self):
        for kwargs in ({"eps_g": 0.0}, {"eps_c": -1.0}, {"eps_div": 0.0},
                       {"dtau_min": 0}, {"dtau_min": 4, "dtau_max": 3}):
            with self.subTest(**kwargs), self.assertRaises(ConfigError):
                RtroConfig(**kwargs)


class StateTests(unittest.TestCase):

    def setUp(self):
        self.mg = make_microgrid(steps=4, ess=False)
        self.state = DayState(self.mg)
        self.state.commit(grid_schedule(self.mg, LOAD), LOAD)

    def test_commit_and_advance(self):
        state = self.state
        np.testing.assert_allclose(state.schedule.grid(), LOAD)
        np.testing.assert_array_equal(state.reference, LOAD)
        state.advance(0.0)
        self.assertEqual((state.t, state.remaining), (1, 3))
        self.assertEqual(state.remaining_schedule().horizon, 3)
        self.assertEqual(state.remaining_microgrid().horizon, 3)
        with self.assertRaises(DimensionError):
            state.commit(grid_schedule(self.mg, LOAD), LOAD)
        self.assertEqual(state.executed_schedule().horizon, 1)

    def test_unchanged_forecast_gives_zero_indicators(self):
        self.state.advance(0.0)
        inputs = indicators(self.state, LOAD[1:], RtroConfig())
        self.assertEqual(inputs.dtau, 1)
        self.assertAlmostEqual(inputs.psi_g, 0.0, places=9)
        self.assertAlmostEqual(inputs.psi_c, 0.0, places=9)
        self.assertEqual(inputs.chi, 0)

    def test_grid_mismatch_of_the_next_step(self):
        self.state.advance(0.0)
        median = LOAD[1:] + np.array([100.0, 0.0, 0.0])
        inputs = indicators(self.state, median, RtroConfig(eps_g=0.01))
        self.assertAlmostEqual(inputs.psi_g, 100.0 / 5000.0, delta=1e-6)
        self.assertGreater(inputs.psi_c, 0.0)
        self.assertEqual(inputs.chi, 1)


class PolicyTests(unittest.TestCase):

    def test_registry(self):
        self.assertIsInstance(create_policy("fro"), FroPolicy)
        self.assertIsInstance(create_policy("static"), StaticPolicy)
        cfg = RtroConfig(eps_g=0.5)
        rtro = create_policy("rtro", cfg)
        self.assertIsInstance(rtro, RtroPolicy)
        self.assertIs(rtro.cfg, cfg)
        self.assertEqual(rtro.describe()["eps_g"], 0.5)
        with self.assertRaises(ConfigError):
            create_policy("sometimes")

    def test_decisions(self):
        inputs = TriggerInputs(t=3, dtau=3, psi_g=0.0, psi_c=0.0, psi=0.0, chi=0)
        self.assertTrue(FroPolicy().should_resolve(None, inputs))
        self.assertFalse(StaticPolicy().should_resolve(None, inputs))
        self.assertTrue(RtroPolicy(RtroConfig(dtau_max=3)).should_resolve(None, inputs))
        self.assertFalse(RtroPolicy().should_resolve(None, inputs))


class RunDayTests(unittest.TestCase):

    def setUp(self):
        self.mg = make_microgrid(steps=4, wt=200.0, ess=False)
        self.realized = 1.05 * LOAD
        self.forecaster = FixedForecaster(band(LOAD, 0.1))

    def run_policy(self, policy, rtro=None, forecaster=None, realized=None, mg=None):
        return run_day(policy, mg or self.mg,
                       self.realized if realized is None else realized,
                       forecaster or self.forecaster, rtro=rtro)

    def test_static_on_the_forecast_day_has_no_recourse(self):
        mg = make_microgrid(steps=4, ess=False)
        oplog = self.run_policy(StaticPolicy(), forecaster=FixedForecaster(band(LOAD, 0.0)),
                                realized=LOAD, mg=mg)
        self.assertEqual(oplog.resolve_count, 1)
        self.assertAlmostEqual(oplog.planned_cost, 0.1 * 0.25 * LOAD.sum(), places=5)
        for s in oplog.steps:
            self.assertAlmostEqual(s.real_time, 0.0, places=4)
        self.assertAlmostEqual(oplog.total_cost, oplog.planned_cost, places=4)
        self.assertEqual(oplog.violations, [])

    def test_resolve_counts(self):
        fro = self.run_policy(FroPolicy())
        static = self.run_policy(StaticPolicy())
        rtro = self.run_policy(RtroPolicy())
        self.assertEqual(fro.resolve_count, 4)
        self.assertEqual(static.resolve_count, 1)
        self.assertTrue(1 <= rtro.resolve_count <= 4)
        self.assertEqual(fro.trigger_steps(), [1, 2, 3])
        self.assertEqual(len(fro.solves), 4)
        self.assertEqual(fro.solves[0].kind, "initial")

    def test_first_row(self):
        oplog = self.run_policy(FroPolicy())
        first = oplog.steps[0]
        self.assertEqual((first.chi, first.psi_g, first.psi_c), (0, 0.0, 0.0))
        self.assertEqual([s.t for s in oplog.steps], [0, 1, 2, 3])
        np.testing.assert_array_equal([s.load_real for s in oplog.steps], self.realized)

    def test_zero_staleness_bound_matches_fro(self):
        cfg = RtroConfig(dtau_max=1)
        fro = self.run_policy(FroPolicy(), rtro=cfg)
        rtro = self.run_policy(RtroPolicy(cfg), rtro=cfg)
        self.assertEqual([s.chi for s in rtro.steps], [s.chi for s in fro.steps])
        np.testing.assert_allclose(rtro.step_costs, fro.step_costs, atol=1e-8)

    def test_staleness_bound_alone(self):
        cfg = RtroConfig(eps_g=math.inf, eps_c=math.inf, dtau_max=2)
        oplog = self.run_policy(RtroPolicy(cfg), rtro=cfg)
        self.assertEqual(oplog.trigger_steps(), [2])
        # floor((T - 1) / dtau_max) <= count - 1 <= T - 1
        self.assertGreaterEqual(oplog.resolve_count - 1, (4 - 1) // 2)

    def test_disabled_trigger_matches_static(self):
        cfg = RtroConfig(eps_g=math.inf, eps_c=math.inf, dtau_max=math.inf)
        static = self.run_policy(StaticPolicy(), rtro=cfg)
        rtro = self.run_policy(RtroPolicy(cfg), rtro=cfg)
        self.assertEqual(rtro.resolve_count, 1)
        np.testing.assert_allclose(rtro.step_costs, static.step_costs, atol=1e-8)

    def test_reproducible_rows(self):
        a = self.run_policy(RtroPolicy()).operation_rows()
        b = self.run_policy(RtroPolicy()).operation_rows()
        self.assertEqual(a, b)
        self.assertEqual(tuple(a[0]), OPERATION_COLUMNS)

    def test_with_storage(self):
        mg = make_microgrid(steps=4, wt=200.0)
        oplog = self.run_policy(FroPolicy(), mg=mg)
        socs = np.array([s.soc for s in oplog.steps])
        self.assertTrue(np.all(socs >= -1e-6))
        self.assertTrue(np.all(socs <= mg.config.e_ess_max + 1e-6))
        self.assertEqual(oplog.violations, [])
        rows = oplog.series_rows()
        self.assertEqual(tuple(rows[0]), SERIES_COLUMNS)
        self.assertIn(rows[0]["emergency"], (0, 1))

    def test_summary_document(self):
        oplog = self.run_policy(RtroPolicy())
        doc = oplog.to_dict()
        self.assertEqual(doc["summary"]["solves"], oplog.resolve_count)
        self.assertEqual(len(doc["steps"]), 4)
        self.assertAlmostEqual(doc["summary"]["cost"], float(sum(s["cost"] for s in doc["steps"])))
        self.assertEqual(doc["summary"]["failed_solves"], 0)
        self.assertEqual(len(doc["simultaneous"]), doc["summary"]["simultaneous"])

    def test_failed_resolves_are_not_counted(self):
        tsro = FailingResolves()
        with self.assertLogs("mgdfl.online.simulator", level="WARNING"):
            oplog = run_day(FroPolicy(), self.mg, self.realized, self.forecaster, tsro=tsro)
        self.assertEqual(tsro.calls, 4)
        self.assertEqual([s.chi for s in oplog.steps], [0, 0, 0, 0])
        self.assertEqual(oplog.resolve_count, 1)
        self.assertEqual(oplog.failed_solves, 3)
        self.assertEqual([r.ok for r in oplog.solves], [True, False, False, False])
        self.assertEqual(oplog.summary()["failed_solves"], 3)

    def test_simultaneous_exchange_is_reported(self):
        with mock.patch("mgdfl.online.simulator.detect_simultaneity",
                        return_value=[(2, "buy/sell")]) as detect:
            oplog = self.run_policy(StaticPolicy())
        executed = detect.call_args.args[0]
        self.assertEqual(len(executed["buy"]), 4)
        np.testing.assert_allclose(executed["buy"] - executed["sell"],
                                   [s.grid for s in oplog.steps])
        self.assertEqual(oplog.simultaneous, ["t=2: buy/sell"])
        self.assertEqual(oplog.summary()["simultaneous"], 1)

    def test_forecast_horizon_checked(self):
        with self.assertRaises(DimensionError):
            self.run_policy(StaticPolicy(), forecaster=BrokenForecaster())
        with self.assertRaises(DimensionError):
            self.run_policy(StaticPolicy(), realized=LOAD[:3])


class ModelForecasterTests(unittest.TestCase):

    def setUp(self):
        torch.manual_seed(0)
        self.model = QuantileNet(n_lags=6, horizon=4, hidden=4, load_scale=1000.0)
        self.ts = pd.date_range("2022-01-05", periods=4, freq="15min")

    def test_interval_shrinks_with_the_day(self):
        f = ModelForecaster(self.model, np.full(6, 1000.0), self.ts)
        pi = f.interval(0, np.zeros(0))
        self.assertEqual(pi.horizon, 4)
        pi = f.interval(3, LOAD[:3])
        self.assertEqual(pi.horizon, 1)
        self.assertTrue(np.all(pi.lower >= 0.0))
        self.assertTrue(np.all(pi.lower <= pi.median) and np.all(pi.median <= pi.upper))

    def test_only_past_load_is_used(self):
        f = ModelForecaster(self.model, np.full(6, 1000.0), self.ts)
        a = f.interval(2, LOAD)
        b = f.interval(2, np.concatenate([LOAD[:2], [5000.0, 5000.0]]))
        np.testing.assert_array_equal(a.median, b.median)

    def test_validation(self):
        with self.assertRaises(DimensionError):
            ModelForecaster(self.model, np.full(5, 1000.0), self.ts)
        with self.assertRaises(DimensionError):
            ModelForecaster(self.model, np.full(6, 1000.0),
                            pd.date_range("2022-01-05", periods=5, freq="15min"))


class BenchmarkTests(unittest.TestCase):

    def jobs(self, days=(1,), forecaster=None):
        mg = make_microgrid(steps=4, wt=200.0, ess=False)
        forecaster = forecaster or FixedForecaster(band(LOAD, 0.1))
        return [DayJob("fixed", policy, "none", day, "typical", mg, 1.05 * LOAD, forecaster)
                for day in days for policy in ("fro", "static")]

    def test_single_day_has_zero_spread(self):
        days, timing = run_benchmark(self.jobs())
        self.assertEqual(len(days), 2)
        summary = summarize(days)
        self.assertEqual(list(summary["policy"]), ["fro", "static"])
        np.testing.assert_array_equal(summary["cost_std"], 0.0)
        np.testing.assert_array_equal(summary["days"], 1)
        np.testing.assert_allclose(summary["cvar_day"], summary["cost_mean"])
        self.assertEqual(list(summary.loc[summary["policy"] == "fro", "solves_mean"]), [4.0])
        table = timing_table(timing)
        self.assertEqual(list(table["solves"]), [4, 1])

    def test_workers_keep_job_order(self):
        serial, _ = run_benchmark(self.jobs(days=(1, 2)))
        parallel, _ = run_benchmark(self.jobs(days=(1, 2)), workers=3)
        pd.testing.assert_frame_equal(serial, parallel)

    def test_subsets_include_all(self):
        days, _ = run_benchmark(self.jobs(days=(1, 2)))
        subsets = summarize_subsets(days)
        self.assertEqual(sorted(set(subsets["label"])), ["all", "typical"])
        self.assertEqual(len(subsets), 4)

    def test_failed_day_is_recorded(self):
        days, _ = run_benchmark(self.jobs(forecaster=BrokenForecaster()))
        self.assertEqual(list(days["failed"]), [1, 1])
        self.assertTrue(days["cost"].isna().all())
        summary = summarize(days)
        np.testing.assert_array_equal(summary["days"], 0)


if __name__ == "__main__":
    unittest.main()
