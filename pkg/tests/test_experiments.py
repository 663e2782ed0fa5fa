"""Unit tests for scenarios, sweeps, comparison and diagnostics."""

import math
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path
from unittest.mock import patch

import numpy as np

from src.experiments import (
    SPEEDUP_TARGET,
    ComparisonReport,
    DisturbanceSequence,
    analyze_stability,
    apply_parameter,
    build_setup,
    compare_sac_lqr,
    crossing_time,
    decay_rate_fit,
    error_at,
    gradient_check,
    perturb_mu,
    plateau_error,
    run_scenario,
    summarize,
    sweep,
    worker_count,
)
from src.models import (
    ClosedLoopResult,
    ConfigError,
    ControlConfig,
    DisturbanceConfig,
    FixedAlpha,
    PlantConfig,
    ProportionalAlpha,
    SacConfig,
    ScenarioConfig,
    SimulationConfig,
)
from src.outputs import file_sha256


def small_config(**disturbance):
    return ScenarioConfig(
        plant=PlantConfig(n_elements=20),
        sac=SacConfig(horizon=0.5),
        simulation=SimulationConfig(duration=0.5),
        disturbance=DisturbanceConfig(**disturbance),
    )


def make_result(errors, dt=0.1):
    errors = np.asarray(errors, dtype=float)
    n = errors.size - 1
    return ClosedLoopResult(
        method="sac",
        times=dt * np.arange(n + 1),
        states=np.zeros((n + 1, 3)),
        controls=np.zeros((n, 4)),
        errors=errors,
        costs=np.ones(n),
        compute_times=np.full(n, 0.002),
    )


class TestDisturbance(unittest.TestCase):
    """Test cases for the seeded perturbation of mu."""

    def test_perturb_mu_bounds(self):
        """Test that every draw stays within the relative level."""
        rng = np.random.default_rng(0)
        draws = [perturb_mu(10.0, 0.2, rng) for _ in range(500)]
        self.assertGreaterEqual(min(draws), 8.0)
        self.assertLessEqual(max(draws), 12.0)

    def test_perturb_mu_invalid_level(self):
        """Test that levels outside [0, 1) are rejected."""
        with self.assertRaises(ValueError):
            perturb_mu(10.0, 1.0, np.random.default_rng(0))

    def test_zero_level_is_nominal(self):
        """Test that a zero level reproduces the nominal mu."""
        sequence = DisturbanceSequence(5.0, 0.0, 1, 4)
        np.testing.assert_array_equal(sequence.values, 5.0)

    def test_sequence_is_reproducible(self):
        """Test identical draws and digest for identical seeds."""
        first = DisturbanceSequence(13.3, 0.1, 42, 30)
        second = DisturbanceSequence(13.3, 0.1, 42, 30)
        other = DisturbanceSequence(13.3, 0.1, 43, 30)
        np.testing.assert_array_equal(first.values, second.values)
        self.assertEqual(first.digest, second.digest)
        self.assertNotEqual(first.digest, other.digest)
        self.assertEqual(len(first), 30)
        self.assertEqual(len(first.digest), 64)


class TestMetrics(unittest.TestCase):
    """Test cases for error-series metrics."""

    def test_decay_rate_of_exponential(self):
        """Test that exp(-3t) fits a rate of -3."""
        t = np.linspace(0.0, 1.0, 11)
        self.assertAlmostEqual(decay_rate_fit(t, np.exp(-3.0 * t)), -3.0, places=10)

    def test_decay_rate_of_constant(self):
        """Test that a constant error has rate zero."""
        t = np.linspace(0.0, 1.0, 11)
        self.assertAlmostEqual(decay_rate_fit(t, np.full(11, 0.3)), 0.0, places=12)

    def test_decay_rate_needs_positive_errors(self):
        """Test that zero errors are rejected."""
        with self.assertRaises(ValueError):
            decay_rate_fit([0.0, 1.0], [1.0, 0.0])

    def test_crossing_time(self):
        """Test the first instant below the relative threshold."""
        result = make_result([1.0, 0.5, 0.04, 0.01])
        self.assertAlmostEqual(crossing_time(result, 0.05), 0.2)
        self.assertIsNone(crossing_time(result, 0.001))

    def test_error_at_interpolates(self):
        """Test linear interpolation between snapshots."""
        result = make_result([1.0, 0.5, 0.04, 0.01])
        self.assertAlmostEqual(error_at(result, 0.05), 0.75)
        self.assertAlmostEqual(error_at(result, 0.1), 0.5)

    def test_summarize(self):
        """Test checkpoint errors and the fitted rate."""
        errors = np.exp(-2.0 * 0.1 * np.arange(31))
        summary = summarize(make_result(errors))
        self.assertAlmostEqual(summary["error_t1"], math.exp(-2.0))
        self.assertAlmostEqual(summary["error_final"], math.exp(-6.0))
        self.assertAlmostEqual(summary["decay_rate"], -2.0, places=10)
        self.assertAlmostEqual(summary["mean_step_time"], 0.002)
        self.assertIn("error_t2", summary)

    def test_summarize_zero_run(self):
        """Test that an all-zero run has no decay rate."""
        summary = summarize(make_result(np.zeros(11)))
        self.assertIsNone(summary["decay_rate"])
        self.assertEqual(summary["crossing_time"], 0.0)


class TestParameters(unittest.TestCase):
    """Test cases for sweep parameters and worker configuration."""

    def test_apply_parameter(self):
        """Test that each sweep parameter changes only its field."""
        cfg = ScenarioConfig()
        updated = apply_parameter(cfg, "gamma", -5)
        self.assertEqual(updated.sac.alpha_policy, ProportionalAlpha(-5.0))
        self.assertEqual(apply_parameter(cfg, "horizon", 0.5).sac.horizon, 0.5)
        changed = apply_parameter(cfg, "obs_window", (0.7, 0.9))
        self.assertEqual(changed.control.observation, (0.7, 0.9))
        self.assertEqual(changed.plant, cfg.plant)

    def test_unknown_parameter(self):
        """Test that unknown sweep parameters raise ConfigError."""
        with self.assertRaises(ConfigError) as ctx:
            apply_parameter(ScenarioConfig(), "beta", 1.0)
        self.assertEqual(ctx.exception.key, "sweep.parameter")

    def test_worker_count(self):
        """Test the worker count read from the environment."""
        with patch.dict("os.environ", {"SAC_PDE_WORKERS": "3"}):
            self.assertEqual(worker_count(), 3)
        with patch.dict("os.environ", {"SAC_PDE_WORKERS": "0"}):
            with self.assertRaises(ConfigError):
                worker_count()
        with patch.dict("os.environ", {"SAC_PDE_WORKERS": "many"}):
            with self.assertRaises(ConfigError):
                worker_count()


class TestSweep(unittest.TestCase):
    """Test cases for parameter sweeps."""

    @patch("src.experiments.run_scenario")
    def test_rows_follow_value_order(self, mock_run):
        """Test one run per value, reported in input order."""
        mock_run.side_effect = lambda cfg: make_result(
            np.exp(cfg.sac.alpha_policy.gamma * 0.1 * np.arange(11))
        )
        seen = []
        result = sweep(
            ScenarioConfig(),
            "gamma",
            [-1, -2, -3],
            workers=1,
            progress=lambda i, v: seen.append(v),
        )
        self.assertEqual(mock_run.call_count, 3)
        self.assertEqual(seen, [-1, -2, -3])
        self.assertFalse(result.partial)
        rates = [summary["decay_rate"] for summary in result.summaries]
        np.testing.assert_allclose(rates, [-1.0, -2.0, -3.0])

    @patch("src.experiments.run_scenario")
    def test_failure_marks_partial(self, mock_run):
        """Test that a failing row stops the sweep and flags it partial."""
        mock_run.side_effect = [
            make_result(np.ones(11)),
            RuntimeError("diverged"),
            make_result(np.ones(11)),
        ]
        result = sweep(ScenarioConfig(), "horizon", [0.5, 1.0, 2.0], workers=1)
        self.assertTrue(result.partial)
        self.assertEqual(result.failures, [(1.0, "diverged")])
        self.assertIsNotNone(result.results[0])
        self.assertIsNone(result.results[2])
        self.assertEqual(mock_run.call_count, 2)

    def test_invalid_value_rejected_before_running(self):
        """Test that an invalid sweep value raises ConfigError up front."""
        with patch("src.experiments.run_scenario") as mock_run:
            with self.assertRaises(ConfigError):
                sweep(ScenarioConfig(), "gamma", [-1.0, 0.5], workers=1)
            mock_run.assert_not_called()

    def test_empty_sweep(self):
        """Test that a sweep without values is rejected."""
        with self.assertRaises(ValueError):
            sweep(ScenarioConfig(), "gamma", [], workers=1)

    def test_single_value_matches_scenario(self):
        """Test that a one-value sweep reproduces the single run."""
        cfg = small_config()
        result = sweep(cfg, "gamma", [-15.0], workers=1)
        single = run_scenario(cfg)
        np.testing.assert_allclose(result.results[0].errors, single.errors, rtol=1e-12)


class TestReferenceSweeps(unittest.TestCase):
    """Test cases for the orderings of the reference-scenario sweeps."""

    def plateaus(self, cfg, parameter, values):
        result = sweep(cfg, parameter, values, workers=1)
        self.assertFalse(result.partial)
        return [summary["plateau_error"] for summary in result.summaries]

    def test_longer_horizon_lowers_plateau(self):
        """Test that the plateau error falls as T grows from 0.5 to 2."""
        short, reference, long = self.plateaus(
            ScenarioConfig(), "horizon", [0.5, 1.0, 2.0]
        )
        self.assertGreater(short, reference)
        self.assertGreater(reference, long)
        self.assertLess(reference, 1e-3)

    def test_gamma_ordering_and_overshoot(self):
        """Test faster decay down to gamma = -20 and overshoot at -30."""
        weak, reference, strong, overshoot = self.plateaus(
            ScenarioConfig(), "gamma", [-10.0, -15.0, -20.0, -30.0]
        )
        self.assertGreater(weak, reference)
        self.assertGreater(reference, strong)
        self.assertGreater(overshoot, strong)

    def test_wider_observation_lowers_plateau(self):
        """Test the plateau ordering (0.7, 0.9) > (0.5, 0.9) > full window."""
        narrow, wide, full = self.plateaus(
            ScenarioConfig(), "obs_window", [(0.7, 0.9), (0.5, 0.9), (0.0, 1.0)]
        )
        self.assertGreater(narrow, wide)
        self.assertGreater(wide, full)

    def test_subdomain_control_with_disturbance_stays_bounded(self):
        """Test that control on (0.5, 0.9) under a 10% mu disturbance levels off."""
        cfg = ScenarioConfig(
            plant=PlantConfig(mu=1.3 * math.pi ** 2),
            control=ControlConfig(support=(0.5, 0.9)),
            disturbance=DisturbanceConfig(level=0.1),
        )
        result = run_scenario(cfg)
        tail = result.errors[-result.errors.size // 3 :]
        self.assertLess(plateau_error(result), 0.01 * result.errors[0])
        self.assertLess(tail.max(), 0.05 * result.errors[0])
        self.assertTrue(np.all(np.isfinite(result.errors)))


class TestScenarios(unittest.TestCase):
    """Test cases for scenario setup and the SAC/LQR comparison."""

    def test_model_mu_override(self):
        """Test that the predictive model can use a different mu."""
        setup = build_setup(small_config(model_mu=12.0))
        self.assertEqual(setup.model.mu, 12.0)
        self.assertAlmostEqual(setup.plant.mu, 1.35 * math.pi ** 2)
        self.assertIsNot(setup.model, setup.plant)

    def test_default_model_is_plant(self):
        """Test that without an override model and plant coincide."""
        setup = build_setup(small_config())
        self.assertIs(setup.model, setup.plant)

    def test_sac_scenario_stabilizes(self):
        """Test that the default SAC tuning reduces the error."""
        result = run_scenario(small_config())
        self.assertEqual(result.validate(), [])
        self.assertLess(result.errors[-1], result.errors[0])

    def test_seeded_runs_write_identical_csvs(self):
        """Test byte-identical series and SHA-256 digests for a repeated seed."""
        cfg = small_config(level=0.1, seed=7)
        digests = []
        with tempfile.TemporaryDirectory() as tmp:
            for run in ("first", "second"):
                output_dir = Path(tmp) / run
                result = run_scenario(cfg, output_dir)
                digests.append(
                    {
                        path.name: file_sha256(path)
                        for path in sorted(output_dir.glob("*.csv"))
                        if path.name != "timing.csv"
                    }
                )
                digests[-1]["disturbance"] = result.disturbance_digest
        self.assertEqual(digests[0], digests[1])
        self.assertEqual(
            sorted(digests[0]),
            ["controls.csv", "costs.csv", "disturbance", "errors.csv", "states.csv"],
        )
        self.assertEqual(len(digests[0]["errors.csv"]), 64)

    def test_comparison_shares_disturbance(self):
        """Test that SAC and LQR see the same realized mu sequence."""
        report = compare_sac_lqr(small_config(level=0.1, seed=7))
        self.assertTrue(report.same_disturbance)
        np.testing.assert_array_equal(report.sac.realized_mu, report.lqr.realized_mu)
        self.assertEqual(report.sac.errors[0], report.lqr.errors[0])
        self.assertGreater(report.care_time, 0.0)


class TestComparisonChecks(unittest.TestCase):
    """Test cases for the crossing-order and speed conditions of a comparison."""

    def make_report(self, sac_crossing, lqr_crossing, care_time=0.5):
        lqr = replace(make_result([1.0, 0.5, 0.1]), method="lqr")
        lqr.offline_time = care_time
        return ComparisonReport(
            sac=make_result([1.0, 0.5, 0.01]),
            lqr=lqr,
            acceptable_error=0.05,
            sac_crossing=sac_crossing,
            lqr_crossing=lqr_crossing,
        )

    def test_crossing_order(self):
        """Test that SAC must cross no later than LQR, and must cross at all."""
        self.assertTrue(self.make_report(0.2, 0.3).crossing_order_ok)
        self.assertTrue(self.make_report(0.2, 0.2).crossing_order_ok)
        self.assertTrue(self.make_report(0.2, None).crossing_order_ok)
        self.assertFalse(self.make_report(0.4, 0.3).crossing_order_ok)
        self.assertFalse(self.make_report(None, 0.3).crossing_order_ok)
        self.assertFalse(self.make_report(None, None).crossing_order_ok)

    def test_speed(self):
        """Test the CARE / SAC per-sample ratio against SPEEDUP_TARGET."""
        fast = self.make_report(0.2, 0.3, care_time=0.002 * SPEEDUP_TARGET)
        slow = self.make_report(0.2, 0.3, care_time=0.002 * SPEEDUP_TARGET / 2)
        self.assertTrue(fast.speed_ok)
        self.assertFalse(slow.speed_ok)
        self.assertEqual(slow.checks, {"crossing_order": True, "speed": False})
        self.assertTrue(fast.passed)
        self.assertFalse(slow.passed)

    def test_failed_checks_are_logged(self):
        """Test that compare_sac_lqr warns about each failed condition."""
        sac = make_result([1.0, 0.5, 0.1])
        lqr = replace(make_result([1.0, 0.5, 0.01]), method="lqr")
        with patch("src.experiments.build_setup"), patch(
            "src.experiments.run_sac", return_value=sac
        ), patch("src.experiments.run_lqr", return_value=lqr), self.assertLogs(
            "sac_pde", level="WARNING"
        ) as logs:
            report = compare_sac_lqr(small_config())
        self.assertIsNone(report.sac_crossing)
        self.assertAlmostEqual(report.lqr_crossing, 0.2)
        self.assertEqual(report.checks, {"crossing_order": False, "speed": False})
        self.assertEqual(len(logs.records), 2)


class TestDiagnostics(unittest.TestCase):
    """Test cases for the gradient check and the stability analysis."""

    def test_gradient_check(self):
        """Test analytic gradients against extrapolated needle differences."""
        cfg = replace(small_config(), sac=SacConfig(horizon=1.0))
        check = gradient_check(cfg, taus=[0.15, 0.55])
        np.testing.assert_allclose([row.tau for row in check.rows], [0.15, 0.55])
        for row in check.rows:
            self.assertLess(row.analytic, 0.0)
        self.assertLess(check.max_relative_error, 1e-3)

    def test_stability_analysis(self):
        """Test the modal report for the default scenario."""
        analysis = analyze_stability(ScenarioConfig(), k_max=16)
        self.assertEqual(analysis.report.unstable_modes, [1])
        self.assertAlmostEqual(analysis.report.alpha_bar, -2.237e-4, delta=1e-7)
        self.assertLess(analysis.alpha_d, analysis.report.alpha_bar)
        self.assertTrue(analysis.verdict)

    def test_stability_with_fixed_alpha(self):
        """Test that a fixed alpha_d is judged as given."""
        cfg = replace(ScenarioConfig(), sac=SacConfig(alpha_policy=FixedAlpha(-1e-5)))
        analysis = analyze_stability(cfg, k_max=16)
        self.assertEqual(analysis.alpha_d, -1e-5)
        self.assertFalse(analysis.verdict)

    def test_gamma_bound(self):
        """Test the gamma verdict on both sides of -2 delta_1."""
        for gamma, ok in ((-15.0, True), (-0.5, False)):
            cfg = replace(
                ScenarioConfig(), sac=SacConfig(alpha_policy=ProportionalAlpha(gamma))
            )
            analysis = analyze_stability(cfg, k_max=16)
            self.assertEqual(analysis.gamma, gamma)
            self.assertIs(analysis.gamma_ok, ok)
        fixed = replace(ScenarioConfig(), sac=SacConfig(alpha_policy=FixedAlpha(-1.0)))
        self.assertIsNone(analyze_stability(fixed, k_max=16).gamma_ok)

    def test_weak_gamma_loop_grows(self):
        """Test that gamma above -2 delta_1 cannot hold the unstable mode."""
        base = small_config()
        cfg = replace(
            base, sac=replace(base.sac, alpha_policy=ProportionalAlpha(-0.5))
        )
        result = run_scenario(cfg)
        self.assertGreater(result.errors[-1], 2.0 * result.errors[0])

    def test_stability_refuses_partial_domains(self):
        """Test that subdomain control and partial observation are refused."""
        cases = [
            (ControlConfig(support=(0.5, 0.9)), "control.support"),
            (ControlConfig(observation=(0.7, 0.9)), "control.observation"),
        ]
        for control, key in cases:
            cfg = replace(ScenarioConfig(), control=control)
            with self.assertRaises(ConfigError) as ctx:
                analyze_stability(cfg)
            self.assertEqual(ctx.exception.key, key)

    def test_stability_accepts_explicit_full_domain(self):
        """Test that an interval spanning the domain counts as full."""
        cfg = replace(ScenarioConfig(), control=ControlConfig(support=(0.0, 1.0)))
        self.assertEqual(analyze_stability(cfg, k_max=16).report.unstable_modes, [1])


if __name__ == "__main__":
    unittest.main()
