"""Unit tests for the LQR baseline."""

import math
import unittest

import numpy as np
import scipy.linalg as la

from src.galerkin import assemble_operators, build_mesh, project_initial
from src.lqr import (
    care_residual,
    initial_stabilizing_gain,
    lqr_gain,
    run_lqr_closed_loop,
    solve_care,
    solve_care_matrices,
    state_space,
)
from src.models import NumericalError

MU = 1.35 * math.pi ** 2


def make_ops(n_elements=20):
    mesh = build_mesh(1.0, n_elements)
    ops = assemble_operators(mesh, MU, 1.6)
    y0 = project_initial(mesh, lambda x: 0.2 * np.sin(math.pi * x))
    return ops, y0


class TestNewtonKleinman(unittest.TestCase):
    """Test cases for the CARE solver on small systems."""

    def test_scalar_unstable(self):
        """Test P = 1 + sqrt(2) for a = b = q = r = 1."""
        solution = solve_care_matrices(1.0, 1.0, 1.0, 1.0)
        self.assertAlmostEqual(solution.P[0, 0], 1.0 + math.sqrt(2.0), places=8)
        self.assertTrue(solution.is_stabilizing)

    def test_scalar_stable(self):
        """Test P = sqrt(2) - 1 for a = -1 and b = q = r = 1."""
        solution = solve_care_matrices(-1.0, 1.0, 1.0, 1.0)
        self.assertAlmostEqual(solution.P[0, 0], math.sqrt(2.0) - 1.0, places=8)

    def test_matches_scipy(self):
        """Test a 2x2 unstable system against solve_continuous_are."""
        a = np.array([[0.0, 1.0], [2.0, -1.0]])
        b = np.array([[0.0], [1.0]])
        q = np.eye(2)
        r = np.array([[1.0]])
        solution = solve_care_matrices(a, b, q, r)
        expected = la.solve_continuous_are(a, b, q, r)
        np.testing.assert_allclose(solution.P, expected, rtol=1e-6)
        self.assertLess(care_residual(a, b, q, r, solution.P), 1e-7)

    def test_initial_gain_stabilizes(self):
        """Test that the Bass gain moves the unstable eigenvalue left."""
        a = np.array([[0.0, 1.0], [2.0, -1.0]])
        b = np.array([[0.0], [1.0]])
        K = initial_stabilizing_gain(a, b, np.eye(1))
        self.assertTrue(np.all(la.eigvals(a - b @ K).real < 0))

    def test_uncontrollable_unstable_mode(self):
        """Test that an unreachable unstable mode raises NumericalError."""
        a = np.diag([1.0, -1.0])
        b = np.array([[0.0], [1.0]])
        with self.assertRaises(NumericalError):
            solve_care_matrices(a, b, np.eye(2), np.eye(1))

    def test_iteration_limit(self):
        """Test that running out of iterations raises NumericalError."""
        with self.assertRaises(NumericalError):
            solve_care_matrices(1.0, 1.0, 1.0, 1.0, max_iterations=1)


class TestFemLqr(unittest.TestCase):
    """Test cases for the LQR design on the assembled plant."""

    def setUp(self):
        """Set up test fixtures."""
        self.ops, self.y0 = make_ops()
        self.solution = solve_care(self.ops)
        self.K = lqr_gain(self.ops, self.solution.P)

    def test_care_is_stabilizing(self):
        """Test a stabilizing symmetric CARE solution."""
        self.assertTrue(self.solution.is_stabilizing)
        np.testing.assert_allclose(self.solution.P, self.solution.P.T)
        self.assertGreater(self.solution.iterations, 0)

    def test_care_solution_is_positive_semidefinite(self):
        """Test that the smallest eigenvalue of P is above -1e-10 ||P||."""
        eigenvalues = la.eigvalsh(self.solution.P)
        self.assertGreaterEqual(eigenvalues[0], -1e-10 * np.abs(eigenvalues).max())
        self.assertGreater(eigenvalues[-1], 0.0)

    def test_state_space(self):
        """Test M A_bar = A and M B_bar = B."""
        a_bar, b_bar = state_space(self.ops)
        mass = self.ops.mass.toarray()
        np.testing.assert_allclose(mass @ a_bar, self.ops.dynamics.toarray(), atol=1e-8)
        np.testing.assert_allclose(mass @ b_bar, self.ops.control.toarray(), atol=1e-12)

    def test_gain_shape(self):
        """Test that K maps states to element controls."""
        self.assertEqual(self.K.shape, (self.ops.n_control, self.ops.n_state))

    def test_closed_loop_decays(self):
        """Test that the sampled LQR loop drives the error down."""
        result = run_lqr_closed_loop(self.ops, self.y0, self.K, 1.0, 0.1)
        self.assertEqual(result.method, "lqr")
        self.assertEqual(len(result.errors), 11)
        self.assertLess(result.errors[-1], 1e-2 * result.errors[0])

    def test_zero_state(self):
        """Test that the zero state stays at rest with zero control."""
        zero = np.zeros(self.ops.n_state)
        result = run_lqr_closed_loop(self.ops, zero, self.K, 0.5, 0.1)
        self.assertTrue(np.all(result.errors == 0.0))
        self.assertTrue(np.all(result.controls == 0.0))

    def test_short_disturbance_rejected(self):
        """Test that too few disturbance draws raise ValueError."""
        with self.assertRaises(ValueError):
            run_lqr_closed_loop(
                self.ops, self.y0, self.K, 1.0, 0.1, disturbance=[MU] * 3
            )

    def test_duration_not_multiple_of_sampling(self):
        """Test that a fractional number of samples is rejected."""
        with self.assertRaises(ValueError):
            run_lqr_closed_loop(self.ops, self.y0, self.K, 1.05, 0.1)


if __name__ == "__main__":
    unittest.main()
