"""Implicit Euler integration of the semidiscrete plant and its adjoint.

Forward steps solve (M - dt A) y_{k+1} = M y_k + dt B u_k. Step matrices are
sparse (tridiagonal for the hat basis) and factored once per step size.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sparse
from scipy.sparse.linalg import splu

try:
    from .galerkin import FemOperators
    from .logging_config import logger
    from .models import NumericalError
except ImportError:
    from galerkin import FemOperators
    from logging_config import logger
    from models import NumericalError

ADJOINT_SCHEMES = ("implicit_euler", "discrete")
NEEDLE_SUBSTEPS = 8


@dataclass(frozen=True)
class HorizonGrid:
    """Uniform grid t0 + k dt, k = 0..n_steps, with dt = horizon / n_steps."""

    t0: float
    horizon: float
    n_steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be at least 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def t_end(self) -> float:
        return self.t0 + self.horizon

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def index_of(self, t: float) -> int:
        """Index of the grid point nearest to ``t``."""
        k = int(round((t - self.t0) / self.dt))
        return min(max(k, 0), self.n_steps)


@dataclass(eq=False)
class Trajectory:
    """Coefficient vectors, one row per time point.

    Adjoint trajectories are stored forward in time. ``step_values`` holds the
    per-step multipliers of the discrete adjoint scheme (one row per step).
    """

    times: np.ndarray
    states: np.ndarray
    kind: str = "forward"
    grid: Optional[HorizonGrid] = None
    step_values: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.states.shape[0] != self.times.shape[0]:
            raise ValueError("trajectory needs one state per time point")

    @property
    def n_steps(self) -> int:
        return self.times.shape[0] - 1

    @property
    def steps(self) -> np.ndarray:
        """Step sizes; exactly the grid step when the trajectory lives on a grid."""
        if self.grid is not None and self.grid.n_steps == self.n_steps:
            return np.full(self.n_steps, self.grid.dt)
        return np.diff(self.times)

    def at(self, index: int) -> np.ndarray:
        return self.states[index]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass(eq=False)
class ControlSignal:
    """Piecewise-constant control, one coefficient vector per step."""

    values: np.ndarray
    grid: Optional[HorizonGrid] = None

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.grid is not None and self.values.shape[0] != self.grid.n_steps:
            raise ValueError(
                f"control has {self.values.shape[0]} steps, "
                f"grid has {self.grid.n_steps}"
            )

    @classmethod
    def zeros(cls, grid: HorizonGrid, n_control: int) -> "ControlSignal":
        return cls(np.zeros((grid.n_steps, n_control)), grid)

    @classmethod
    def constant(cls, grid: HorizonGrid, value: np.ndarray) -> "ControlSignal":
        return cls(np.tile(np.asarray(value, dtype=float), (grid.n_steps, 1)), grid)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]


def _step_matrix(ops: FemOperators, dt: float) -> sparse.csc_matrix:
    return (ops.mass - dt * ops.dynamics).tocsc()


def step_factor(ops: FemOperators, dt: float, cache: bool = True):
    """splu factor of M - dt A, cached on the operators per step size."""
    factors = ops.extras.setdefault("step_factors", {})
    if cache and dt in factors:
        return factors[dt]
    try:
        factor = splu(_step_matrix(ops, dt))
    except RuntimeError as exc:
        raise NumericalError(
            f"step matrix M - dt*A is singular for dt={dt}: {exc}"
        ) from exc
    if cache:
        factors[dt] = factor
        logger.debug("factored step matrix for dt=%.3g (N=%d)", dt, ops.n_state)
    return factor


def _march(ops: FemOperators, y0: np.ndarray, steps: np.ndarray, controls: np.ndarray):
    """Forward implicit Euler over arbitrary step sizes."""
    n_state = ops.n_state
    states = np.empty((steps.size + 1, n_state))
    states[0] = y0
    uniform = bool(np.all(steps == steps[0]))
    for k, dt in enumerate(steps):
        factor = step_factor(ops, float(dt), cache=uniform)
        rhs = ops.mass @ states[k] + dt * (ops.control @ controls[k])
        states[k + 1] = factor.solve(rhs)
    if not np.all(np.isfinite(states)):
        raise NumericalError("forward solve produced non-finite values")
    return states


def _check_state(ops: FemOperators, y0) -> np.ndarray:
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (ops.n_state,):
        raise ValueError(
            f"initial state has shape {y0.shape}, expected ({ops.n_state},)"
        )
    return y0


def solve_forward(
    ops: FemOperators, y0: np.ndarray, u: ControlSignal, grid: HorizonGrid
) -> Trajectory:
    """Implicit Euler: (M - dt A) y_{k+1} = M y_k + dt B u_k."""
    y0 = _check_state(ops, y0)
    if u.n_steps != grid.n_steps or u.values.shape[1] != ops.n_control:
        raise ValueError("control signal does not match the grid or the control space")
    steps = np.full(grid.n_steps, grid.dt)
    states = _march(ops, y0, steps, u.values)
    return Trajectory(grid.times, states, kind="forward", grid=grid)


def _terminal(ops: FemOperators, P_T) -> Optional[sparse.spmatrix]:
    if P_T is None:
        return None
    if np.isscalar(P_T):
        return None if P_T == 0 else float(P_T) * ops.mass
    return P_T


def solve_adjoint(
    ops: FemOperators,
    forward: Trajectory,
    P_T=None,
    scheme: str = "implicit_euler",
) -> Trajectory:
    """Backward adjoint on the forward trajectory's grid.

    ``implicit_euler``: M p_N = P_T y_N, (M - dt A) p_k = M p_{k+1} + dt W y_k.
    ``discrete``: exact transpose of the forward scheme plus trapezoid cost,
    so that the step multipliers q_j give dJ/du_j = dt_j B^T q_j exactly.

    ``P_T`` may be a matrix, a scalar multiple of the mass matrix, or None.
    """
    if scheme not in ADJOINT_SCHEMES:
        raise ValueError(f"unknown adjoint scheme {scheme!r}")
    if forward.kind != "forward":
        raise ValueError("adjoint needs a forward trajectory")
    steps = forward.steps
    ys = forward.states
    n = steps.size
    terminal = _terminal(ops, P_T)
    uniform = bool(np.all(steps == steps[0]))

    adjoint = np.zeros_like(ys)
    if terminal is not None:
        adjoint[n] = ops.solve_mass(terminal @ ys[n])
    W = ops.observation
    M = ops.mass

    if scheme == "implicit_euler":
        for k in range(n - 1, -1, -1):
            dt = float(steps[k])
            rhs = M @ adjoint[k + 1] + dt * (W @ ys[k])
            adjoint[k] = step_factor(ops, dt, cache=uniform).solve(rhs)
        return Trajectory(forward.times, adjoint, kind="adjoint", grid=forward.grid)

    multipliers = np.zeros((n, ops.n_state))
    for j in range(n - 1, -1, -1):
        dt = float(steps[j])
        rhs = M @ adjoint[j + 1] + 0.5 * dt * (W @ ys[j + 1])
        multipliers[j] = step_factor(ops, dt, cache=uniform).solve(rhs)
        adjoint[j] = multipliers[j] + 0.5 * dt * ops.solve_mass(W @ ys[j])
    return Trajectory(
        forward.times,
        adjoint,
        kind="adjoint",
        grid=forward.grid,
        step_values=multipliers,
    )


def trapezoid_weights(times: np.ndarray) -> np.ndarray:
    steps = np.diff(times)
    weights = np.zeros(times.size)
    weights[:-1] += 0.5 * steps
    weights[1:] += 0.5 * steps
    return weights


def stage_cost(ops: FemOperators, forward: Trajectory, P_T=None) -> float:
    """J1 = 1/2 sum_k w_k y_k^T W y_k + 1/2 y_N^T P_T y_N (trapezoid weights w_k)."""
    ys = forward.states
    running = np.einsum("ki,ki->k", ys, (ops.observation @ ys.T).T)
    cost = 0.5 * float(trapezoid_weights(forward.times) @ running)
    terminal = _terminal(ops, P_T)
    if terminal is not None:
        cost += 0.5 * float(ys[-1] @ (terminal @ ys[-1]))
    return cost


def cost_gradient(ops: FemOperators, adjoint: Trajectory) -> np.ndarray:
    """dJ1/du_j = dt_j B^T q_j from a ``discrete`` adjoint; one row per step."""
    if adjoint.step_values is None:
        raise ValueError("cost_gradient needs an adjoint solved with scheme='discrete'")
    steps = adjoint.steps
    return steps[:, None] * (ops.control.T @ adjoint.step_values.T).T


def _needle_grid(grid: HorizonGrid, tau: float, lam: float, substeps: int):
    """Grid with ``substeps`` steps on [tau - lam/2, tau + lam/2] cut to the horizon."""
    lo = max(tau - 0.5 * lam, grid.t0)
    hi = min(tau + 0.5 * lam, grid.t_end)
    base = grid.times
    window = np.linspace(lo, hi, substeps + 1)
    outside = base[(base < lo) | (base > hi)]
    times = np.union1d(outside, window)
    # drop slivers produced by window edges landing next to base nodes
    keep = np.concatenate([[True], np.diff(times) > 1e-14 * max(1.0, grid.horizon)])
    times = times[keep]
    mids = 0.5 * (times[:-1] + times[1:])
    base_index = np.clip(
        np.searchsorted(base, mids, side="right") - 1, 0, grid.n_steps - 1
    )
    in_window = (mids > lo) & (mids < hi)
    return times, base_index, in_window


def needle_variation_cost(
    ops: FemOperators,
    y0: np.ndarray,
    u1: ControlSignal,
    tau: float,
    v: np.ndarray,
    lam: float,
    grid: HorizonGrid,
    P_T=None,
    substeps: int = NEEDLE_SUBSTEPS,
    clip: bool = False,
) -> float:
    """J1 of u1 replaced by the constant ``v`` on [tau - lam/2, tau + lam/2].

    Both the varied and the unvaried control are integrated on the same
    locally refined grid; the returned value is J1(u1) on ``grid`` plus their
    difference, so v = u1(tau) reproduces J1(u1) exactly. With ``clip`` the
    window is cut to the horizon instead of being rejected.
    """
    if not lam > 0:
        raise ValueError(f"needle duration must be positive, got {lam}")
    lo, hi = tau - 0.5 * lam, tau + 0.5 * lam
    slack = 1e-12 * grid.horizon
    if clip:
        inside = lo < grid.t_end and hi > grid.t0
    else:
        inside = grid.t0 - slack <= lo and hi <= grid.t_end + slack
    if not inside:
        raise ValueError(f"needle window [{lo}, {hi}] is outside the horizon")
    y0 = _check_state(ops, y0)
    v = np.asarray(v, dtype=float)
    base_cost = stage_cost(ops, solve_forward(ops, y0, u1, grid), P_T)

    times, base_index, in_window = _needle_grid(grid, tau, lam, substeps)
    steps = np.diff(times)
    reference = u1.values[base_index]
    varied = reference.copy()
    varied[in_window] = v

    costs = []
    for controls in (varied, reference):
        states = _march(ops, y0, steps, controls)
        costs.append(stage_cost(ops, Trajectory(times, states), P_T))
    return base_cost + (costs[0] - costs[1])


def solve_closed_loop(
    ops: FemOperators, y0: np.ndarray, gain: np.ndarray, grid: HorizonGrid
) -> Trajectory:
    """Implicit Euler for M y' = (A + B G) y under the feedback u = G y."""
    y0 = _check_state(ops, y0)
    gain = np.asarray(gain, dtype=float)
    if gain.shape != (ops.n_control, ops.n_state):
        expected = (ops.n_control, ops.n_state)
        raise ValueError(f"gain has shape {gain.shape}, expected {expected}")
    closed = ops.dynamics.toarray() + ops.control @ gain
    step = ops.mass.toarray() - grid.dt * closed
    try:
        factor = la.lu_factor(step)
    except (la.LinAlgError, ValueError) as exc:
        raise NumericalError(f"closed-loop step matrix is singular: {exc}") from exc
    states = np.empty((grid.n_steps + 1, ops.n_state))
    states[0] = y0
    for k in range(grid.n_steps):
        states[k + 1] = la.lu_solve(factor, ops.mass @ states[k])
    return Trajectory(grid.times, states, kind="forward", grid=grid)


def simulate_interval(
    ops: FemOperators, y0: np.ndarray, controls: np.ndarray, dt: float, t0: float = 0.0
) -> Tuple[Trajectory, float]:
    """Advance the plant over one sampling interval with per-substep controls.

    Returns the sub-step trajectory and the running cost 1/2 int y^T W y over it.
    """
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    grid = HorizonGrid(t0, dt * controls.shape[0], controls.shape[0])
    trajectory = solve_forward(ops, y0, ControlSignal(controls, grid), grid)
    return trajectory, stage_cost(ops, trajectory)
