"""Unit tests for forward and adjoint time stepping."""

import math
import unittest

import numpy as np

from src.evolution import (
    ControlSignal,
    HorizonGrid,
    cost_gradient,
    needle_variation_cost,
    simulate_interval,
    solve_adjoint,
    solve_closed_loop,
    solve_forward,
    stage_cost,
    step_factor,
    trapezoid_weights,
)
from src.galerkin import (
    ObservationWindow,
    assemble_operators,
    build_mesh,
    l2_norm,
    project_initial,
)

MU = 1.35 * math.pi ** 2


def make_ops(n_elements=20, q_bar=10.0):
    mesh = build_mesh(1.0, n_elements)
    window = ObservationWindow(0.0, 1.0, q_bar)
    ops = assemble_operators(mesh, MU, 1.6, obs_window=window)
    y0 = project_initial(mesh, lambda x: 0.2 * np.sin(math.pi * x))
    return ops, y0


class TestHorizonGrid(unittest.TestCase):
    """Test cases for HorizonGrid."""

    def test_times_and_step(self):
        """Test the uniform time points."""
        grid = HorizonGrid(0.5, 1.0, 4)
        self.assertAlmostEqual(grid.dt, 0.25)
        np.testing.assert_allclose(grid.times, [0.5, 0.75, 1.0, 1.25, 1.5])
        self.assertAlmostEqual(grid.t_end, 1.5)

    def test_index_of_clamps(self):
        """Test nearest-index lookup clamped to the grid."""
        grid = HorizonGrid(0.0, 1.0, 10)
        self.assertEqual(grid.index_of(0.31), 3)
        self.assertEqual(grid.index_of(-1.0), 0)
        self.assertEqual(grid.index_of(5.0), 10)

    def test_invalid_grid(self):
        """Test that empty horizons are rejected."""
        with self.assertRaises(ValueError):
            HorizonGrid(0.0, 0.0, 10)
        with self.assertRaises(ValueError):
            HorizonGrid(0.0, 1.0, 0)

    def test_trapezoid_weights_sum_to_horizon(self):
        """Test that the quadrature weights integrate constants exactly."""
        weights = trapezoid_weights(HorizonGrid(0.0, 2.0, 7).times)
        self.assertAlmostEqual(weights.sum(), 2.0)


class TestForward(unittest.TestCase):
    """Test cases for the forward solver."""

    def setUp(self):
        """Set up test fixtures."""
        self.ops, self.y0 = make_ops()
        self.grid = HorizonGrid(0.0, 1.0, 20)

    def test_zero_state_stays_zero(self):
        """Test that zero data and zero control give the zero trajectory."""
        u = ControlSignal.zeros(self.grid, self.ops.n_control)
        trajectory = solve_forward(self.ops, np.zeros(self.ops.n_state), u, self.grid)
        self.assertTrue(np.all(trajectory.states == 0.0))

    def test_step_satisfies_implicit_euler(self):
        """Test the residual of (M - dt A) y1 = M y0 + dt B u0."""
        rng = np.random.default_rng(3)
        u = ControlSignal(rng.normal(size=(20, self.ops.n_control)), self.grid)
        trajectory = solve_forward(self.ops, self.y0, u, self.grid)
        dt = self.grid.dt
        y1 = trajectory.states[1]
        lhs = self.ops.mass @ y1 - dt * (self.ops.dynamics @ y1)
        rhs = self.ops.mass @ self.y0 + dt * (self.ops.control @ u.values[0])
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_open_loop_growth_rate(self):
        """Test that the uncontrolled reference plant grows at 0.35 pi^2."""
        ops, y0 = make_ops(n_elements=100)
        grid = HorizonGrid(0.0, 1.0, 1000)
        zero = ControlSignal.zeros(grid, ops.n_control)
        trajectory = solve_forward(ops, y0, zero, grid)
        norms = [l2_norm(ops.mass, y) for y in trajectory.states]
        slope = np.polyfit(grid.times, np.log(norms), 1)[0]
        self.assertAlmostEqual(slope / (0.35 * math.pi ** 2), 1.0, delta=0.02)

    def test_first_order_in_time(self):
        """Test O(dt) convergence against a reference with a 16 times smaller step."""
        reference_grid = HorizonGrid(0.0, 1.0, 1280)
        reference = solve_forward(
            self.ops,
            self.y0,
            ControlSignal.zeros(reference_grid, self.ops.n_control),
            reference_grid,
        ).final
        errors = []
        for n_steps in (40, 80):
            grid = HorizonGrid(0.0, 1.0, n_steps)
            u = ControlSignal.zeros(grid, self.ops.n_control)
            final = solve_forward(self.ops, self.y0, u, grid).final
            errors.append(l2_norm(self.ops.mass, final - reference))
        order = math.log2(errors[0] / errors[1])
        self.assertAlmostEqual(order, 1.0, delta=0.15)

    def test_heat_semigroup_contracts(self):
        """Test that with mu = 0 the L2 norm never grows, for any initial state."""
        mesh = build_mesh(1.0, 20)
        ops = assemble_operators(mesh, 0.0, 1.6)
        y0 = np.random.default_rng(11).normal(size=ops.n_state)
        u = ControlSignal.zeros(self.grid, ops.n_control)
        trajectory = solve_forward(ops, y0, u, self.grid)
        norms = np.array([l2_norm(ops.mass, y) for y in trajectory.states])
        self.assertTrue(np.all(np.diff(norms) <= 1e-14 * norms[0]))
        self.assertLess(norms[-1], norms[0])

    def test_control_shape_mismatch(self):
        """Test that a control on the wrong grid is rejected."""
        u = ControlSignal.zeros(HorizonGrid(0.0, 1.0, 5), self.ops.n_control)
        with self.assertRaises(ValueError):
            solve_forward(self.ops, self.y0, u, self.grid)

    def test_step_factor_is_cached(self):
        """Test that step factors are reused per step size."""
        first = step_factor(self.ops, 0.05)
        self.assertIs(step_factor(self.ops, 0.05), first)
        self.assertIn(0.05, self.ops.extras["step_factors"])

    def test_closed_loop_with_zero_gain(self):
        """Test that zero feedback reproduces the open-loop solve."""
        gain = np.zeros((self.ops.n_control, self.ops.n_state))
        closed = solve_closed_loop(self.ops, self.y0, gain, self.grid)
        u = ControlSignal.zeros(self.grid, self.ops.n_control)
        open_loop = solve_forward(self.ops, self.y0, u, self.grid)
        np.testing.assert_allclose(closed.states, open_loop.states, rtol=1e-10)

    def test_simulate_interval(self):
        """Test sub-step trajectory length and a nonnegative running cost."""
        controls = np.zeros((10, self.ops.n_control))
        trajectory, cost = simulate_interval(self.ops, self.y0, controls, 0.01, t0=0.3)
        self.assertEqual(trajectory.states.shape[0], 11)
        self.assertAlmostEqual(trajectory.times[-1], 0.4)
        self.assertGreater(cost, 0.0)


class TestAdjoint(unittest.TestCase):
    """Test cases for the adjoint solver and gradients."""

    def setUp(self):
        """Set up test fixtures."""
        self.ops, self.y0 = make_ops()
        self.grid = HorizonGrid(0.0, 1.0, 20)
        self.zero = ControlSignal.zeros(self.grid, self.ops.n_control)

    def test_adjoint_zero_for_zero_state(self):
        """Test that a zero trajectory has a zero adjoint."""
        y0 = np.zeros(self.ops.n_state)
        forward = solve_forward(self.ops, y0, self.zero, self.grid)
        for scheme in ("implicit_euler", "discrete"):
            adjoint = solve_adjoint(self.ops, forward, 1.0, scheme=scheme)
            self.assertTrue(np.all(adjoint.states == 0.0))

    def test_adjoint_zero_without_observation(self):
        """Test that W = 0 and no terminal weight give a zero adjoint."""
        ops, y0 = make_ops(q_bar=0.0)
        forward = solve_forward(ops, y0, self.zero, self.grid)
        adjoint = solve_adjoint(ops, forward)
        self.assertTrue(np.all(adjoint.states == 0.0))

    def test_terminal_condition(self):
        """Test p_N = y_N for P_T = M and W = 0."""
        ops, y0 = make_ops(q_bar=0.0)
        forward = solve_forward(ops, y0, self.zero, self.grid)
        adjoint = solve_adjoint(ops, forward, 1.0)
        np.testing.assert_allclose(adjoint.final, forward.final, rtol=1e-10)

    def test_discrete_gradient_matches_finite_differences(self):
        """Test dJ/du against central differences of the quadratic cost."""
        rng = np.random.default_rng(7)
        values = rng.normal(size=(self.grid.n_steps, self.ops.n_control))
        for terminal in (None, 2.0):
            u = ControlSignal(values, self.grid)
            forward = solve_forward(self.ops, self.y0, u, self.grid)
            gradient = cost_gradient(
                self.ops, solve_adjoint(self.ops, forward, terminal, scheme="discrete")
            )
            for j, e in ((0, 3), (7, 10), (19, 15)):
                eps = 0.1
                costs = []
                for sign in (1.0, -1.0):
                    varied = values.copy()
                    varied[j, e] += sign * eps
                    trajectory = solve_forward(
                        self.ops, self.y0, ControlSignal(varied, self.grid), self.grid
                    )
                    costs.append(stage_cost(self.ops, trajectory, terminal))
                difference = (costs[0] - costs[1]) / (2 * eps)
                self.assertAlmostEqual(difference / gradient[j, e], 1.0, delta=1e-6)

    def test_uncontrolled_cost_matches_single_mode_integral(self):
        """Test J1 of the free reference plant against 1/2 q^2 int ||y||^2 = 144.8."""
        ops, y0 = make_ops(n_elements=100)
        grid = HorizonGrid(0.0, 1.0, 1000)
        forward = solve_forward(ops, y0, ControlSignal.zeros(grid, ops.n_control), grid)
        delta = 0.35 * math.pi ** 2
        expected = 0.5 * 100.0 * 0.02 * math.expm1(2.0 * delta) / (2.0 * delta)
        self.assertAlmostEqual(expected, 144.8, delta=0.1)
        self.assertAlmostEqual(stage_cost(ops, forward) / expected, 1.0, delta=0.03)

    def test_cost_gradient_needs_discrete_adjoint(self):
        """Test that the implicit Euler adjoint carries no step multipliers."""
        forward = solve_forward(self.ops, self.y0, self.zero, self.grid)
        with self.assertRaises(ValueError):
            cost_gradient(self.ops, solve_adjoint(self.ops, forward))

    def test_unknown_scheme(self):
        """Test that an unknown adjoint scheme is rejected."""
        forward = solve_forward(self.ops, self.y0, self.zero, self.grid)
        with self.assertRaises(ValueError):
            solve_adjoint(self.ops, forward, scheme="rk4")


class TestNeedleVariation(unittest.TestCase):
    """Test cases for needle-variation costs."""

    def setUp(self):
        """Set up test fixtures."""
        self.ops, self.y0 = make_ops()
        self.grid = HorizonGrid(0.0, 1.0, 20)
        self.u1 = ControlSignal.zeros(self.grid, self.ops.n_control)

    def test_unvaried_value_reproduces_cost(self):
        """Test that inserting u1 itself leaves J1 unchanged."""
        j1 = stage_cost(self.ops, solve_forward(self.ops, self.y0, self.u1, self.grid))
        cost = needle_variation_cost(
            self.ops,
            self.y0,
            self.u1,
            0.5,
            np.zeros(self.ops.n_control),
            0.01,
            self.grid,
        )
        self.assertAlmostEqual(cost, j1, places=12)

    def test_window_touching_horizon_start(self):
        """Test that a window starting at t0 is accepted."""
        v = -np.ones(self.ops.n_control)
        cost = needle_variation_cost(
            self.ops, self.y0, self.u1, 0.05, v, 0.1, self.grid
        )
        self.assertTrue(np.isfinite(cost))

    def test_window_outside_horizon(self):
        """Test that windows leaving the horizon are rejected."""
        v = np.zeros(self.ops.n_control)
        with self.assertRaises(ValueError):
            needle_variation_cost(self.ops, self.y0, self.u1, 0.99, v, 0.1, self.grid)
        with self.assertRaises(ValueError):
            needle_variation_cost(self.ops, self.y0, self.u1, 0.5, v, 0.0, self.grid)


if __name__ == "__main__":
    unittest.main()
