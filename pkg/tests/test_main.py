import json
import tempfile
import unittest
from pathlib import Path

import pandas as pd
import torch

from mgdfl.errors import EXIT_CONFIG, EXIT_OK
from mgdfl.forecast import QuantileNet
from mgdfl.main import main
from mgdfl.protocol import OPERATION_COLUMNS, load_checkpoint, read_json, save_checkpoint

CONFIG = {
    "synthetic": {"days": 3, "spike_prob": 0.0, "sigma": 10.0},
    "network": {"enabled": False},
    "train": {"n_lags": 8, "hidden": 4, "epochs": 1, "train_days": 2, "batch_size": 4},
    "mode": "plain",
}


def persistence_model() -> QuantileNet:
    """Median equal to yesterday's load with a near-zero interval."""
    model = QuantileNet(n_lags=96, horizon=96, hidden=4, load_scale=2000.0)
    with torch.no_grad():
        for _, p in model.theta():
            p.zero_()
        model.increment_head.bias.fill_(-10.0)
    return model


class MainTests(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name)
        cls.config = cls.root / "run.json"
        cls.config.write_text(json.dumps(CONFIG))
        cls.data = cls.root / "data"
        code = main(["generate", "--config", str(cls.config), "--out", str(cls.data)])
        assert code == EXIT_OK
        cls.ckpt = cls.root / "persistence.ckpt"
        save_checkpoint(cls.ckpt, persistence_model(), mode="plain", epochs=0, curve=[])

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def common(self, out):
        return ["--config", str(self.config), "--dataset", str(self.data),
                "--out", str(self.root / out)]

    def test_generate_manifest(self):
        manifest = read_json(self.data / "manifest.json")
        self.assertEqual(manifest["seed"], 0)
        self.assertEqual(len(manifest["config_hash"]), 64)
        self.assertEqual(len(list(self.data.glob("day_*.csv"))), 3)

    def test_generate_seed_override(self):
        out = self.root / "seeded"
        self.assertEqual(main(["generate", "--config", str(self.config), "--out", str(out),
                               "--seed", "4"]), EXIT_OK)
        self.assertEqual(read_json(out / "manifest.json")["seed"], 4)

    def test_train_and_resume(self):
        self.assertEqual(main(["train"] + self.common("train")), EXIT_OK)
        out = self.root / "train"
        curve = pd.read_csv(out / "curves.csv")
        self.assertEqual(list(curve["epoch"]), [1])
        self.assertIn("all", read_json(out / "metrics.json"))
        _, header = load_checkpoint(out / "model.ckpt")
        self.assertEqual(header["mode"], "plain")

        argv = ["train"] + self.common("resumed") + ["--checkpoint", str(out / "model.ckpt")]
        self.assertEqual(main(argv), EXIT_OK)
        _, header = load_checkpoint(self.root / "resumed" / "model.ckpt")
        self.assertEqual([r["epoch"] for r in header["curve"]], [1, 2])

    def test_simulate(self):
        argv = ["simulate"] + self.common("sim") + ["--checkpoint", str(self.ckpt),
                                                   "--day", "1", "--policy", "static"]
        self.assertEqual(main(argv), EXIT_OK)
        out = self.root / "sim"
        ops = pd.read_csv(out / "operation.csv")
        self.assertEqual(tuple(ops.columns), OPERATION_COLUMNS)
        self.assertEqual(len(ops), 96)
        self.assertEqual(int(ops["chi"].sum()), 0)
        timing = pd.read_csv(out / "timing.csv")
        self.assertEqual(list(timing["kind"]), ["initial"])
        doc = read_json(out / "operation.json")
        self.assertEqual(doc["summary"]["policy"], "static")
        self.assertTrue((out / "series.csv").exists())

    def test_benchmark(self):
        argv = ["benchmark"] + self.common("bench") + ["--checkpoint", str(self.ckpt),
                                                       "--policy", "static", "--days", "1"]
        self.assertEqual(main(argv), EXIT_OK)
        out = self.root / "bench"
        summary = pd.read_csv(out / "summary.csv")
        self.assertEqual(list(summary["method"]), ["persistence"])
        self.assertEqual(list(summary["days"]), [1])
        self.assertNotIn("solve_ms", " ".join(summary.columns))
        for name in ("days.csv", "summary_subsets.csv", "summary_timing.csv"):
            self.assertTrue((out / name).exists())

    def test_config_errors_exit_with_code_1(self):
        bad = self.root / "bad.json"
        bad.write_text(json.dumps({"bogus": 1}))
        self.assertEqual(main(["generate", "--config", str(bad)]), EXIT_CONFIG)
        self.assertEqual(main(["simulate"] + self.common("nockpt")), EXIT_CONFIG)
        argv = ["simulate"] + self.common("badday") + ["--checkpoint", str(self.ckpt),
                                                      "--day", "9"]
        self.assertEqual(main(argv), EXIT_CONFIG)


if __name__ == "__main__":
    unittest.main()
