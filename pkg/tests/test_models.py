"""Unit tests for models module."""

import math
import unittest

import numpy as np

from src.models import (
    ClosedLoopResult,
    ConfigError,
    ControlConfig,
    FixedDuration,
    InitialProfile,
    LineSearchDuration,
    PlantConfig,
    ProportionalAlpha,
    SacConfig,
    ScenarioConfig,
    SimulationConfig,
)


class TestConfigError(unittest.TestCase):
    """Test cases for ConfigError messages."""

    def test_message_with_key_and_line(self):
        """Test the key path and line prefix."""
        error = ConfigError("must be negative", key="sac.gamma", line=4)
        self.assertEqual(str(error), "sac.gamma (line 4): must be negative")

    def test_message_variants(self):
        """Test messages with only a line or nothing attached."""
        self.assertEqual(str(ConfigError("bad", line=2)), "line 2: bad")
        self.assertEqual(str(ConfigError("bad")), "bad")
        self.assertIsInstance(ConfigError("bad"), ValueError)


class TestScenarioConfig(unittest.TestCase):
    """Test cases for ScenarioConfig and its sections."""

    def test_default_values(self):
        """Test the reference scenario defaults."""
        cfg = ScenarioConfig()
        self.assertAlmostEqual(cfg.plant.mu, 1.35 * math.pi ** 2)
        self.assertEqual(cfg.plant.beta, 1.6)
        self.assertEqual(cfg.plant.n_elements, 100)
        self.assertEqual(cfg.control.q_bar, 10.0)
        self.assertEqual(cfg.sac.alpha_policy, ProportionalAlpha(-15.0))
        self.assertEqual(cfg.sac.duration_policy, FixedDuration())
        self.assertAlmostEqual(cfg.sac.dt, 0.01)
        self.assertEqual(cfg.sac.horizon_steps, 100)
        self.assertEqual(cfg.n_samples, 30)
        self.assertTrue(cfg.is_valid())

    def test_model_mu_defaults_to_plant(self):
        """Test that the model uses the plant mu unless overridden."""
        self.assertEqual(ScenarioConfig().model_mu, ScenarioConfig().plant.mu)

    def test_validation_errors(self):
        """Test that invalid sections report their errors."""
        self.assertIn(
            "gamma must be negative",
            SacConfig(alpha_policy=ProportionalAlpha(0.5)).validate(),
        )
        self.assertIn(
            "sampling time must satisfy 0 < t_s <= T",
            SacConfig(horizon=0.05).validate(),
        )
        self.assertIn(
            "action duration must not exceed the sampling time",
            SacConfig(duration_policy=FixedDuration(0.2)).validate(),
        )
        self.assertIn(
            "shrink must lie in (0, 1)", LineSearchDuration(shrink=1.0).validate()
        )
        self.assertTrue(ControlConfig(support=(0.5, 1.5)).validate())
        self.assertTrue(SimulationConfig(duration=0.25).validate())
        self.assertTrue(PlantConfig(n_elements=1).validate())

    def test_check_raises_first_error(self):
        """Test that check raises ConfigError."""
        cfg = ScenarioConfig(simulation=SimulationConfig(method="pid"))
        with self.assertRaises(ConfigError) as ctx:
            cfg.check()
        self.assertIn("pid", str(ctx.exception))


class TestInitialProfile(unittest.TestCase):
    """Test cases for initial profiles."""

    def test_sine_profile(self):
        """Test 0.2 sin(pi x) and its zeros on the boundary."""
        profile = InitialProfile()
        values = profile(np.array([0.0, 0.5, 1.0]))
        np.testing.assert_allclose(values, [0.0, 0.2, 0.0], atol=1e-15)

    def test_zero_profile(self):
        """Test the zero profile and an unknown kind."""
        self.assertEqual(InitialProfile(kind="zero")(0.3), 0.0)
        self.assertTrue(InitialProfile(kind="step").validate())


class TestClosedLoopResult(unittest.TestCase):
    """Test cases for ClosedLoopResult."""

    def test_consistent_lengths(self):
        """Test snapshot and per-sample series lengths."""
        result = ClosedLoopResult(
            method="lqr",
            times=np.arange(3.0),
            states=np.zeros((3, 2)),
            controls=np.zeros((2, 2)),
            errors=np.ones(3),
            costs=np.ones(2),
            compute_times=np.array([0.001, 0.003]),
        )
        self.assertEqual(result.validate(), [])
        self.assertEqual(result.n_samples, 2)
        self.assertAlmostEqual(result.mean_step_time, 0.002)

    def test_inconsistent_lengths(self):
        """Test that a short series is reported."""
        result = ClosedLoopResult(
            method="sac",
            times=np.arange(3.0),
            states=np.zeros((2, 2)),
            controls=np.zeros((2, 2)),
            errors=np.ones(3),
            costs=np.ones(1),
            compute_times=np.zeros(2),
        )
        errors = result.validate()
        self.assertIn("snapshot count must equal step count + 1", errors)
        self.assertIn("costs must have one entry per sample", errors)


if __name__ == "__main__":
    unittest.main()
