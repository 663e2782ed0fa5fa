"""Unit tests for controller module."""

import json
import tempfile
import unittest
from pathlib import Path
from unittest.mock import MagicMock, patch

import numpy as np

from src.controller import ExperimentController, parse_sweep_values
from src.experiments import SweepResult
from src.models import (
    ClosedLoopResult,
    ConfigError,
    NumericalError,
    PlantConfig,
    ScenarioConfig,
)


def make_result(n_samples=5):
    times = 0.1 * np.arange(n_samples + 1)
    return ClosedLoopResult(
        method="sac",
        times=times,
        states=np.zeros((n_samples + 1, 3)),
        controls=np.zeros((n_samples, 4)),
        errors=np.exp(-times),
        costs=np.ones(n_samples),
        compute_times=np.full(n_samples, 0.001),
    )


class TestParseSweepValues(unittest.TestCase):
    """Test cases for sweep values from the command line."""

    def test_numbers(self):
        """Test plain and pi-scaled numbers."""
        self.assertEqual(parse_sweep_values("gamma", ["-5", "-15"]), [-5.0, -15.0])

    def test_windows(self):
        """Test observation windows written a,b."""
        self.assertEqual(parse_sweep_values("obs_window", ["0.7,0.9"]), [(0.7, 0.9)])
        with self.assertRaises(ConfigError) as ctx:
            parse_sweep_values("obs_window", ["0.7,L"])
        self.assertEqual(ctx.exception.key, "sweep.values")

    def test_bad_input(self):
        """Test unknown parameters, empty lists and malformed values."""
        with self.assertRaises(ConfigError) as ctx:
            parse_sweep_values("beta", ["1"])
        self.assertEqual(ctx.exception.key, "sweep.parameter")
        with self.assertRaises(ConfigError):
            parse_sweep_values("gamma", [])
        with self.assertRaises(ConfigError):
            parse_sweep_values("horizon", ["long"])


class TestExperimentController(unittest.TestCase):
    """Test cases for ExperimentController class."""

    def setUp(self):
        """Set up test fixtures."""
        self.mock_view = MagicMock()
        self.controller = ExperimentController(self.mock_view)
        self.controller.config = ScenarioConfig(plant=PlantConfig(n_elements=4))
        self.tmp = tempfile.TemporaryDirectory()
        self.output_dir = Path(self.tmp.name)

    def tearDown(self):
        """Clean up test fixtures."""
        self.tmp.cleanup()

    def manifest(self):
        return json.loads((self.output_dir / "manifest.json").read_text())

    def test_load_default_config(self):
        """Test defaults when no file is given and the seed override."""
        cfg = self.controller.load_config(None, seed=5)
        self.assertEqual(cfg.plant, ScenarioConfig().plant)
        self.assertEqual(cfg.disturbance.seed, 5)
        self.assertIs(self.controller.config, cfg)

    def test_load_config_file(self):
        """Test loading a scenario file."""
        path = self.output_dir / "scenario.cfg"
        path.write_text("[simulation]\nmethod = lqr\n")
        cfg = self.controller.load_config(str(path))
        self.assertEqual(cfg.simulation.method, "lqr")

    @patch("src.experiments.run_scenario")
    def test_simulate(self, mock_run):
        """Test that simulate writes series, script and a complete manifest."""
        mock_run.return_value = make_result()
        status = self.controller.run("simulate", self.output_dir)

        self.assertEqual(status, "complete")
        self.mock_view.show_header.assert_called_once_with("simulate")
        self.mock_view.show_simulation.assert_called_once()
        for name in ("errors.csv", "states.csv", "timing.csv", "plot_results.py"):
            self.assertTrue((self.output_dir / name).exists(), name)
        manifest = self.manifest()
        self.assertEqual(manifest["status"], "complete")
        self.assertIn("errors.csv", [entry["name"] for entry in manifest["files"]])
        self.mock_view.show_completion.assert_called_once()
        self.assertEqual(self.mock_view.show_completion.call_args[0][2], "complete")

    @patch("src.experiments.run_scenario")
    def test_failure_finalizes_manifest(self, mock_run):
        """Test that a solver failure is shown and recorded."""
        mock_run.side_effect = NumericalError("closed loop diverged")
        with self.assertRaises(NumericalError):
            self.controller.run("simulate", self.output_dir)

        self.mock_view.show_error.assert_called_once_with("closed loop diverged")
        manifest = self.manifest()
        self.assertEqual(manifest["status"], "failed")
        self.assertEqual(manifest["error"], "closed loop diverged")

    @patch("src.experiments.sweep")
    def test_partial_sweep(self, mock_sweep):
        """Test that a sweep with a failed row ends partial."""
        mock_sweep.return_value = SweepResult(
            parameter="gamma",
            values=[-5.0, -15.0],
            results=[make_result(), None],
            summaries=[{"plateau_error": 0.1, "crossing_time": None}, None],
            failures=[(-15.0, "diverged")],
        )
        status = self.controller.run(
            "sweep", self.output_dir, parameter="gamma", values=["-5", "-15"]
        )

        self.assertEqual(status, "partial")
        args = mock_sweep.call_args[0]
        self.assertEqual((args[1], args[2]), ("gamma", [-5.0, -15.0]))
        self.assertTrue((self.output_dir / "gamma_-5_errors.csv").exists())
        self.assertTrue((self.output_dir / "sweep_summary.csv").exists())
        self.assertEqual(self.manifest()["status"], "partial")

    def test_analyze(self):
        """Test the modal stability report files."""
        status = self.controller.run("analyze", self.output_dir)
        self.assertEqual(status, "complete")
        self.assertTrue((self.output_dir / "stability.txt").exists())
        self.assertTrue((self.output_dir / "stability_modes.csv").exists())
        analysis = self.mock_view.show_stability.call_args[0][0]
        self.assertEqual(analysis.report.unstable_modes, [1])

    def test_unknown_command(self):
        """Test that unknown commands raise ConfigError."""
        with self.assertRaises(ConfigError):
            self.controller.run("optimize", self.output_dir)


if __name__ == "__main__":
    unittest.main()
