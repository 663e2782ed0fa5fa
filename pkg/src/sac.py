"""Sequential action control for the semidiscrete plant.

Each sample predicts the uncontrolled plant over the horizon, solves the
adjoint, and picks the single control value whose needle insertion tracks the
target cost-decrease rate alpha_d at least control effort.
"""

import time
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la

try:
    from .evolution import (
        ControlSignal,
        HorizonGrid,
        Trajectory,
        needle_variation_cost,
        simulate_interval,
        solve_adjoint,
        solve_forward,
        stage_cost,
        step_factor,
    )
    from .galerkin import FemOperators, l2_norm
    from .logging_config import logger
    from .models import (
        AlphaPolicy,
        ApplicationTime,
        ClosedLoopResult,
        ConfigError,
        DurationPolicy,
        FixedAlpha,
        FixedDuration,
        LineSearchDuration,
        NumericalError,
        ProportionalAlpha,
        SacConfig,
    )
except ImportError:
    from evolution import (
        ControlSignal,
        HorizonGrid,
        Trajectory,
        needle_variation_cost,
        simulate_interval,
        solve_adjoint,
        solve_forward,
        stage_cost,
        step_factor,
    )
    from galerkin import FemOperators, l2_norm
    from logging_config import logger
    from models import (
        AlphaPolicy,
        ApplicationTime,
        ClosedLoopResult,
        ConfigError,
        DurationPolicy,
        FixedAlpha,
        FixedDuration,
        LineSearchDuration,
        NumericalError,
        ProportionalAlpha,
        SacConfig,
    )

SOLVERS = ("sherman_morrison", "dense")


@dataclass
class SacAction:
    """One SAC decision: apply ``control`` around ``tau`` for ``duration``."""

    control: np.ndarray
    tau: float
    duration: float
    gradient: float
    alpha_d: float
    certified: bool = True

    @property
    def window(self) -> Tuple[float, float]:
        return self.tau - 0.5 * self.duration, self.tau + 0.5 * self.duration


def mode_insertion_gradient(ops: FemOperators, p, u1, v) -> float:
    """p^T B (v - u1): derivative of J1 in the needle duration at zero."""
    p = np.asarray(p, dtype=float)
    delta = np.asarray(v, dtype=float) - np.asarray(u1, dtype=float)
    return float(p @ (ops.control @ delta))


def l2_objective(ops: FemOperators, p, u1, v, alpha_d: float) -> float:
    """1/2 (p^T B (v - u1) - alpha_d)^2 + 1/2 v^T R v."""
    v = np.asarray(v, dtype=float)
    tracking = mode_insertion_gradient(ops, p, u1, v) - alpha_d
    return 0.5 * tracking ** 2 + 0.5 * float(v @ (ops.control_weight @ v))


def sac_action_at(
    ops: FemOperators, p, u1, alpha_d: float, solver: str = "sherman_morrison"
) -> np.ndarray:
    """Solve (Lambda + R) u* = Lambda u1 + alpha_d B^T p.

    Lambda = (B^T p)(B^T p)^T is rank one, so the default solver applies
    Sherman-Morrison to R; ``solver="dense"`` factors Lambda + R instead.
    """
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}")
    b = ops.control.T @ np.asarray(p, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    if solver == "dense":
        rhs = b * (b @ u1 + alpha_d)
        lhs = np.outer(b, b) + ops.control_weight
        try:
            return la.solve(lhs, rhs, assume_a="pos")
        except la.LinAlgError as exc:
            raise ConfigError(
                "control weight R must be symmetric positive definite"
            ) from exc
    return _rank_one_action(ops, b, u1, alpha_d)


def _rank_one_action(ops: FemOperators, b: np.ndarray, u1, alpha_d: float):
    """R^{-1} b (b^T u1 + alpha_d) / (1 + g) with g = b^T R^{-1} b."""
    r_inv_b = ops.solve_control_weight(b)
    g = float(b @ r_inv_b)
    target = float(b @ np.asarray(u1, dtype=float)) + alpha_d
    return r_inv_b * (target / (1.0 + g))


def first_order_feedback_gain(
    ops: FemOperators, fbar: np.ndarray, alpha_d: float
) -> np.ndarray:
    """alpha_d R^{-1} B^T F as a (controls x states) matrix."""
    fbar = np.asarray(fbar, dtype=float)
    if fbar.shape != (ops.n_state, ops.n_state):
        expected = (ops.n_state, ops.n_state)
        raise ValueError(f"F has shape {fbar.shape}, expected {expected}")
    return alpha_d * ops.solve_control_weight(ops.control.T @ fbar)


def first_order_feedback_action(
    ops: FemOperators, fbar: np.ndarray, y, alpha_d: float
) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (ops.n_state,):
        raise ValueError(f"state has shape {y.shape}, expected ({ops.n_state},)")
    return alpha_d * ops.solve_control_weight(ops.control.T @ (np.asarray(fbar) @ y))


def choose_alpha_d(policy: AlphaPolicy, j1_nominal: float) -> float:
    if isinstance(policy, FixedAlpha):
        if not policy.alpha < 0:
            raise ConfigError("alpha must be negative", key="sac.alpha")
        return float(policy.alpha)
    if isinstance(policy, ProportionalAlpha):
        if not policy.gamma < 0:
            raise ConfigError("gamma must be negative", key="sac.gamma")
        if j1_nominal < 0:
            raise ValueError(f"nominal cost must be nonnegative, got {j1_nominal}")
        return float(policy.gamma * j1_nominal)
    raise ConfigError(f"unknown alpha policy {policy!r}")


def horizon_gain_matrix(ops: FemOperators, grid: HorizonGrid, P_T=None) -> np.ndarray:
    """Matrix of the linear map y(t0) -> p(t0) under u1 = 0 on ``grid``.

    Propagates the identity through the forward and adjoint recurrences, which
    is the horizon-grid quadrature of the Lyapunov representation of p.
    """
    n = ops.n_state
    factor = step_factor(ops, grid.dt)
    # linear recurrences: run them on all unit vectors at once
    forward_states = np.empty((grid.n_steps + 1, n, n))
    forward_states[0] = np.eye(n)
    for k in range(grid.n_steps):
        forward_states[k + 1] = factor.solve(ops.mass @ forward_states[k])
    gain = np.zeros((n, n))
    if P_T is not None and not (np.isscalar(P_T) and P_T == 0):
        terminal = float(P_T) * ops.mass if np.isscalar(P_T) else P_T
        gain = ops.solve_mass(terminal @ forward_states[-1])
    for k in range(grid.n_steps - 1, -1, -1):
        rhs = ops.mass @ gain + grid.dt * (ops.observation @ forward_states[k])
        gain = factor.solve(rhs)
    return gain


def solve_costate_early_lumping(
    ops: FemOperators, forward: Trajectory, P_T=None
) -> Trajectory:
    """Adjoint of the plant discretized first.

    Solves rho' = -A M^{-1} rho - W y with rho(T) = P_T y(T) by
    implicit Euler on the forward grid with dense state-space matrices.
    """
    steps = forward.steps
    ys = forward.states
    n = steps.size
    a_bar_t = ops.dynamics.toarray() @ ops.solve_mass(np.eye(ops.n_state))
    costate = np.zeros_like(ys)
    if P_T is not None and not (np.isscalar(P_T) and P_T == 0):
        terminal = float(P_T) * ops.mass if np.isscalar(P_T) else P_T
        costate[n] = terminal @ ys[n]
    factors = {}
    for k in range(n - 1, -1, -1):
        dt = float(steps[k])
        if dt not in factors:
            factors[dt] = la.lu_factor(np.eye(ops.n_state) - dt * a_bar_t)
        rhs = costate[k + 1] + dt * (ops.observation @ ys[k])
        costate[k] = la.lu_solve(factors[dt], rhs)
    return Trajectory(forward.times, costate, kind="adjoint", grid=forward.grid)


def early_lumping_action(ops: FemOperators, rho, u1, alpha_d: float) -> np.ndarray:
    """Solve (Lambda + R) u = Lambda u1 + alpha_d b with b = B^T M^{-1} rho."""
    b = ops.control.T @ ops.solve_mass(np.asarray(rho, dtype=float))
    return _rank_one_action(ops, b, u1, alpha_d)


def _value_at(trajectory: Trajectory, t: float) -> np.ndarray:
    """Linear interpolation of a trajectory in time."""
    times = trajectory.times
    k = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, times.size - 2))
    weight = (t - times[k]) / (times[k + 1] - times[k])
    if abs(weight) < 1e-12:
        return trajectory.states[k]
    if abs(weight - 1.0) < 1e-12:
        return trajectory.states[k + 1]
    return (1.0 - weight) * trajectory.states[k] + weight * trajectory.states[k + 1]


def _control_at(u1: ControlSignal, grid: HorizonGrid, t: float) -> np.ndarray:
    k = int(np.clip(np.floor((t - grid.t0) / grid.dt + 1e-9), 0, u1.n_steps - 1))
    return u1.values[k]


def select_application_time(
    ops: FemOperators,
    adjoint: Trajectory,
    u1: ControlSignal,
    alpha_d: float,
    policy: ApplicationTime,
    sampling_time: float,
    calculation_time: float = 0.0,
    latest: Optional[float] = None,
) -> Tuple[float, SacAction]:
    """Pick tau and the action there.

    FIRST_SAMPLE places tau in the middle of the first applicable sampling
    interval. MIN_GRADIENT evaluates every horizon grid point in
    [t0 + calculation_time, latest] (the whole horizon when ``latest`` is None)
    and keeps the most negative gradient (earliest on ties).
    """
    times = adjoint.times
    if times.size < 2:
        raise ValueError("empty horizon")
    grid = adjoint.grid or HorizonGrid(times[0], times[-1] - times[0], times.size - 1)
    t0 = times[0]

    if ApplicationTime(policy) is ApplicationTime.FIRST_SAMPLE:
        tau = t0 + calculation_time + 0.5 * sampling_time
        p = _value_at(adjoint, tau)
        reference = _control_at(u1, grid, tau)
        control = sac_action_at(ops, p, reference, alpha_d)
        gradient = mode_insertion_gradient(ops, p, reference, control)
        return tau, SacAction(control, tau, sampling_time, gradient, alpha_d)

    mask = times >= t0 + calculation_time - 1e-12
    if latest is not None:
        mask &= times <= latest + 1e-12
    candidates = np.flatnonzero(mask)
    if candidates.size == 0:
        raise ValueError("empty horizon")
    best = None
    for k in candidates:
        tau = float(times[k])
        p = adjoint.states[k]
        reference = _control_at(u1, grid, tau)
        control = sac_action_at(ops, p, reference, alpha_d)
        gradient = mode_insertion_gradient(ops, p, reference, control)
        if best is None or gradient < best.gradient:
            best = SacAction(control, tau, sampling_time, gradient, alpha_d)
    return best.tau, best


def select_duration(
    ops: FemOperators,
    y0,
    u1: ControlSignal,
    action: SacAction,
    grid: HorizonGrid,
    policy: DurationPolicy,
    sampling_time: float,
    P_T=None,
    reference_cost: Optional[float] = None,
) -> Tuple[float, bool]:
    """Return (duration, certified).

    LineSearchDuration shrinks from its maximum until the needle-varied cost
    drops below J1(u1); if it never does, the smallest trial comes back with
    certified = False.
    """
    if isinstance(policy, FixedDuration):
        return (policy.duration if policy.duration is not None else sampling_time), True
    if not isinstance(policy, LineSearchDuration):
        raise ConfigError(f"unknown duration policy {policy!r}")

    if reference_cost is None:
        reference_cost = stage_cost(ops, solve_forward(ops, y0, u1, grid), P_T)
    duration = policy.max_duration if policy.max_duration is not None else sampling_time
    for trial in range(policy.max_trials):
        cost = needle_variation_cost(
            ops, y0, u1, action.tau, action.control, duration, grid, P_T, clip=True
        )
        logger.debug(
            "line search trial %d: lambda=%.4g J=%.6g (J_ref=%.6g)",
            trial,
            duration,
            cost,
            reference_cost,
        )
        if cost < reference_cost:
            return duration, True
        if trial < policy.max_trials - 1:
            duration *= policy.shrink
    logger.warning(
        "line search exhausted after %d trials at tau=%.4g; "
        "cost decrease not certified",
        policy.max_trials,
        action.tau,
    )
    return duration, False


class SacController:
    """Receding-horizon SAC on a predictive model of the plant."""

    def __init__(self, ops: FemOperators, config: SacConfig):
        errors = config.validate()
        if errors:
            raise ConfigError(errors[0], key="sac")
        self.ops = ops
        self.config = config
        self.terminal = config.terminal_weight if config.terminal_weight > 0 else None

    def horizon_grid(self, t0: float) -> HorizonGrid:
        cfg = self.config
        return HorizonGrid(t0, cfg.horizon_steps * cfg.dt, cfg.horizon_steps)

    def compute_action(self, y, t0: float) -> Tuple[SacAction, float]:
        """SAC decision for the state ``y`` sampled at ``t0``, and J1 of u1 = 0."""
        cfg = self.config
        ops = self.ops
        grid = self.horizon_grid(t0)
        u1 = ControlSignal.zeros(grid, ops.n_control)
        nominal = solve_forward(ops, y, u1, grid)
        j1 = stage_cost(ops, nominal, self.terminal)
        adjoint = solve_adjoint(ops, nominal, self.terminal)
        alpha_d = choose_alpha_d(cfg.alpha_policy, j1)
        _, action = select_application_time(
            ops,
            adjoint,
            u1,
            alpha_d,
            cfg.application_time,
            cfg.sampling_time,
            cfg.calculation_time,
            latest=t0 + cfg.sampling_time,
        )
        if cfg.saturation is not None:
            action.control = np.clip(action.control, *cfg.saturation)
            action.gradient = mode_insertion_gradient(
                ops,
                _value_at(adjoint, action.tau),
                np.zeros(ops.n_control),
                action.control,
            )
        if alpha_d == 0.0:
            action.duration = cfg.duration_for()
            return action, j1
        action.duration, action.certified = select_duration(
            ops,
            y,
            u1,
            action,
            grid,
            cfg.duration_policy,
            cfg.sampling_time,
            self.terminal,
            reference_cost=j1,
        )
        return action, j1

    def predicted_cost(self, y, t0: float, action: SacAction) -> float:
        """J1 over the horizon with ``action`` applied on its window."""
        cfg = self.config
        grid = self.horizon_grid(t0)
        mids = grid.times[:-1] + 0.5 * grid.dt
        lo, hi = action.window
        values = np.zeros((grid.n_steps, self.ops.n_control))
        values[(mids > lo) & (mids < hi)] = action.control
        trajectory = solve_forward(self.ops, y, ControlSignal(values, grid), grid)
        return stage_cost(self.ops, trajectory, self.terminal)

    def interval_controls(
        self, t0: float, action: SacAction, carried: Optional[np.ndarray]
    ) -> np.ndarray:
        """Per-substep controls over [t0, t0 + t_s].

        Substeps still inside the calculation latency keep the previous
        action; substeps inside the action window get the new one.
        """
        cfg = self.config
        dt = cfg.dt
        mids = t0 + dt * (np.arange(cfg.steps_per_sample) + 0.5)
        controls = np.zeros((cfg.steps_per_sample, self.ops.n_control))
        if carried is not None and cfg.calculation_time > 0:
            controls[mids < t0 + cfg.calculation_time] = carried
        lo, hi = action.window
        active = (mids > lo) & (mids < hi) & (mids >= t0 + cfg.calculation_time)
        controls[active] = action.control
        return controls


def run_receding_horizon(
    ops: FemOperators,
    y0,
    cfg: SacConfig,
    sim_duration: float,
    disturbance: Optional[Sequence[float]] = None,
    plant: Optional[FemOperators] = None,
) -> ClosedLoopResult:
    """Closed loop of SAC and the realized plant over ``sim_duration``.

    ``ops`` is the predictive model. The realized plant is ``plant`` (default:
    ``ops``); when ``disturbance`` is given it holds one realized mu per
    sampling interval and replaces the plant's mu on that interval.
    """
    controller = SacController(ops, cfg)
    plant = plant if plant is not None else ops
    ratio = sim_duration / cfg.sampling_time
    n_samples = int(round(ratio))
    if n_samples < 1 or abs(ratio - n_samples) > 1e-9 * max(1.0, ratio):
        raise ValueError(
            "simulation duration must be a positive multiple of the sampling time"
        )
    if disturbance is not None and len(disturbance) < n_samples:
        raise ValueError(f"disturbance has {len(disturbance)} draws, need {n_samples}")

    y = np.asarray(y0, dtype=float).copy()
    times = cfg.sampling_time * np.arange(n_samples + 1)
    states = np.empty((n_samples + 1, ops.n_state))
    errors = np.empty(n_samples + 1)
    controls = np.zeros((n_samples, ops.n_control))
    costs = np.empty(n_samples)
    compute_times = np.empty(n_samples)
    alpha_series = np.empty(n_samples)
    taus = np.empty(n_samples)
    durations = np.empty(n_samples)
    gradients = np.empty(n_samples)
    decreased = np.ones(n_samples, dtype=bool)
    realized_mu = np.empty(n_samples)
    states[0] = y
    errors[0] = l2_norm(plant.mass, y)
    carried = None

    for k in range(n_samples):
        t = times[k]
        started = time.perf_counter()
        action, j1 = controller.compute_action(y, t)
        compute_times[k] = time.perf_counter() - started

        predicted = controller.predicted_cost(y, t, action)
        decreased[k] = action.certified and (predicted < j1 or j1 == 0.0)
        if not decreased[k]:
            logger.warning(
                "predicted cost did not decrease at t=%.4g (J1=%.6g -> %.6g)",
                t,
                j1,
                predicted,
            )

        mu = float(disturbance[k]) if disturbance is not None else plant.mu
        realized = plant if mu == plant.mu else plant.with_mu(mu)
        substep_controls = controller.interval_controls(t, action, carried)
        trajectory, cost = simulate_interval(
            realized, y, substep_controls, cfg.dt, t0=t
        )
        y = trajectory.final
        if not np.all(np.isfinite(y)):
            raise NumericalError(
                f"closed loop diverged at t={t + cfg.sampling_time:.4g}"
            )

        applied = np.any(substep_controls != 0.0, axis=1)
        if np.any(applied):
            controls[k] = substep_controls[applied][-1]
        carried = action.control
        states[k + 1] = y
        errors[k + 1] = l2_norm(plant.mass, y)
        costs[k] = cost
        alpha_series[k] = action.alpha_d
        taus[k] = action.tau
        durations[k] = action.duration
        gradients[k] = action.gradient
        realized_mu[k] = mu
        logger.debug(
            "t=%.3f |y|=%.4e alpha_d=%.4g grad=%.4g step=%.2fms",
            t,
            errors[k + 1],
            action.alpha_d,
            action.gradient,
            1e3 * compute_times[k],
        )

    return ClosedLoopResult(
        method="sac",
        times=times,
        states=states,
        controls=controls,
        errors=errors,
        costs=costs,
        compute_times=compute_times,
        alpha_d=alpha_series,
        taus=taus,
        durations=durations,
        gradients=gradients,
        cost_decrease_flags=decreased,
        realized_mu=realized_mu,
    )
