"""LQR baseline on the semidiscrete plant.

The CARE is posed in state-space form with A_bar = M^{-1} A, B_bar = M^{-1} B,
state weight W and control weight R:

    A_bar^T P + P A_bar - P B_bar R^{-1} B_bar^T P + W = 0,

and the feedback is u = -K y with K = R^{-1} B_bar^T P = R^{-1} B^T M^{-1} P.
"""

import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as la

try:
    from .evolution import simulate_interval
    from .galerkin import FemOperators, l2_norm
    from .logging_config import logger
    from .models import ClosedLoopResult, NumericalError
except ImportError:
    from evolution import simulate_interval
    from galerkin import FemOperators, l2_norm
    from logging_config import logger
    from models import ClosedLoopResult, NumericalError


@dataclass
class RiccatiSolution:
    P: np.ndarray
    residual: float
    iterations: int
    solve_time: float = 0.0
    closed_loop_eigenvalues: Optional[np.ndarray] = None

    @property
    def is_stabilizing(self) -> bool:
        if self.closed_loop_eigenvalues is None:
            return False
        return bool(np.all(self.closed_loop_eigenvalues.real < 0))


def care_residual(
    a: np.ndarray, b: np.ndarray, q: np.ndarray, r: np.ndarray, P: np.ndarray
) -> float:
    """Frobenius norm of A^T P + P A - P B R^{-1} B^T P + Q."""
    r_inv_bt_p = la.solve(r, b.T @ P, assume_a="pos")
    return float(la.norm(a.T @ P + P @ a - P @ b @ r_inv_bt_p + q, "fro"))


def initial_stabilizing_gain(a: np.ndarray, b: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Gain moving the unstable eigenvalues of A into the left half-plane.

    Orders a real Schur form so the stable block comes first and applies the
    Bass construction to the trailing (unstable) block only; the closed-loop
    matrix stays block upper triangular, so the stable part is untouched.
    """
    n = a.shape[0]
    T, Z, n_stable = la.schur(a, output="real", sort="lhp")
    if n_stable == n:
        return np.zeros((b.shape[1], n))
    T22 = T[n_stable:, n_stable:]
    B2 = (Z.T @ b)[n_stable:]
    shift = max(1.0, float(np.max(la.eigvals(T22).real)))
    shifted = T22 + shift * np.eye(n - n_stable)
    rhs = 2.0 * B2 @ la.solve(r, B2.T, assume_a="pos")
    X = la.solve_continuous_lyapunov(shifted, rhs)
    try:
        K2 = la.solve(r, B2.T, assume_a="pos") @ la.inv(X)
    except la.LinAlgError as exc:
        raise NumericalError(
            "no stabilizing initial gain: unstable modes are not controllable"
        ) from exc
    logger.debug(
        "initial gain: %d unstable eigenvalue(s), shift %.3g", n - n_stable, shift
    )
    return K2 @ Z[:, n_stable:].T


def solve_care_matrices(
    a,
    b,
    q,
    r,
    tolerance: float = 1e-8,
    max_iterations: int = 50,
) -> RiccatiSolution:
    """Newton-Kleinman iteration with Bartels-Stewart Lyapunov sub-solves.

    Converged when the residual drops to ``tolerance * ||Q||_F``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    started = time.perf_counter()

    K = initial_stabilizing_gain(a, b, r)
    if np.any(la.eigvals(a - b @ K).real >= 0):
        raise NumericalError("no stabilizing initial gain found")
    target = tolerance * la.norm(q, "fro")
    P = np.zeros_like(a)
    residual = np.inf
    best = np.inf
    stalled = 0
    for iteration in range(1, max_iterations + 1):
        closed = a - b @ K
        P = la.solve_continuous_lyapunov(closed.T, -(q + K.T @ r @ K))
        P = 0.5 * (P + P.T)
        K = la.solve(r, b.T @ P, assume_a="pos")
        residual = care_residual(a, b, q, r, P)
        logger.debug("newton-kleinman iteration %d: residual %.3e", iteration, residual)
        if residual <= target:
            break
        if residual < best:
            stalled = 0
        else:
            stalled += 1
            if stalled >= 5:
                raise NumericalError(
                    f"Newton-Kleinman stagnated at residual {residual:.3e} "
                    f"(target {target:.3e})"
                )
        best = min(best, residual)
    else:
        raise NumericalError(
            f"Newton-Kleinman did not converge in {max_iterations} iterations "
            f"(residual {residual:.3e}, target {target:.3e})"
        )

    eigenvalues = la.eigvals(a - b @ K)
    return RiccatiSolution(
        P=P,
        residual=residual,
        iterations=iteration,
        solve_time=time.perf_counter() - started,
        closed_loop_eigenvalues=eigenvalues,
    )


def state_space(ops: FemOperators):
    """(A_bar, B_bar) = (M^{-1} A, M^{-1} B) as dense arrays."""
    a_bar = ops.solve_mass(ops.dynamics.toarray())
    b_bar = ops.solve_mass(ops.control.toarray())
    return a_bar, b_bar


def solve_care(
    ops: FemOperators, tolerance: float = 1e-8, max_iterations: int = 50
) -> RiccatiSolution:
    """CARE of the semidiscrete plant with the SAC stage-cost weights (W, R)."""
    started = time.perf_counter()
    a_bar, b_bar = state_space(ops)
    solution = solve_care_matrices(
        a_bar,
        b_bar,
        ops.observation.toarray(),
        ops.control_weight,
        tolerance,
        max_iterations,
    )
    solution.solve_time = time.perf_counter() - started
    logger.info(
        "CARE solved in %d iterations (residual %.2e, %.3fs)",
        solution.iterations,
        solution.residual,
        solution.solve_time,
    )
    return solution


def lqr_gain(ops: FemOperators, P: np.ndarray) -> np.ndarray:
    """K = R^{-1} B^T M^{-1} P; the feedback is u = -K y."""
    P = np.asarray(P, dtype=float)
    return ops.solve_control_weight(ops.control.T @ ops.solve_mass(P))


def run_lqr_closed_loop(
    ops: FemOperators,
    y0,
    K: np.ndarray,
    sim_duration: float,
    sampling_time: float,
    disturbance: Optional[Sequence[float]] = None,
    steps_per_sample: int = 10,
    offline_time: float = 0.0,
    plant: Optional[FemOperators] = None,
) -> ClosedLoopResult:
    """Sampled feedback u = -K y(t_k) held over each sampling interval.

    The gain comes from the model ``ops``; the realized plant is ``plant``
    (default ``ops``) with mu replaced per interval by ``disturbance``.
    """
    plant = plant if plant is not None else ops
    ratio = sim_duration / sampling_time
    n_samples = int(round(ratio))
    if n_samples < 1 or abs(ratio - n_samples) > 1e-9 * max(1.0, ratio):
        raise ValueError(
            "simulation duration must be a positive multiple of the sampling time"
        )
    if disturbance is not None and len(disturbance) < n_samples:
        raise ValueError(f"disturbance has {len(disturbance)} draws, need {n_samples}")
    dt = sampling_time / steps_per_sample

    y = np.asarray(y0, dtype=float).copy()
    times = sampling_time * np.arange(n_samples + 1)
    states = np.empty((n_samples + 1, ops.n_state))
    errors = np.empty(n_samples + 1)
    controls = np.empty((n_samples, ops.n_control))
    costs = np.empty(n_samples)
    compute_times = np.empty(n_samples)
    realized_mu = np.empty(n_samples)
    states[0] = y
    errors[0] = l2_norm(ops.mass, y)

    for k in range(n_samples):
        started = time.perf_counter()
        u = -(K @ y)
        compute_times[k] = time.perf_counter() - started

        mu = float(disturbance[k]) if disturbance is not None else plant.mu
        realized = plant if mu == plant.mu else plant.with_mu(mu)
        trajectory, cost = simulate_interval(
            realized, y, np.tile(u, (steps_per_sample, 1)), dt, t0=times[k]
        )
        y = trajectory.final
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"LQR closed loop diverged at t={times[k + 1]:.4g}")
        states[k + 1] = y
        errors[k + 1] = l2_norm(ops.mass, y)
        controls[k] = u
        costs[k] = cost
        realized_mu[k] = mu

    return ClosedLoopResult(
        method="lqr",
        times=times,
        states=states,
        controls=controls,
        errors=errors,
        costs=costs,
        compute_times=compute_times,
        realized_mu=realized_mu,
        offline_time=offline_time,
    )
