"""Scenario runner, parameter sweeps and SAC/LQR comparison."""

import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

try:
    from .evolution import (
        ControlSignal,
        HorizonGrid,
        needle_variation_cost,
        solve_adjoint,
        solve_forward,
        stage_cost,
    )
    from .galerkin import (
        ControlSupport,
        FemOperators,
        ObservationWindow,
        assemble_operators,
        build_mesh,
        project_initial,
    )
    from .logging_config import logger
    from .lqr import lqr_gain, run_lqr_closed_loop, solve_care
    from .models import (
        AlphaPolicy,
        ClosedLoopResult,
        ConfigError,
        FixedAlpha,
        ProportionalAlpha,
        ScenarioConfig,
    )
    from .sac import (
        choose_alpha_d,
        mode_insertion_gradient,
        run_receding_horizon,
        sac_action_at,
    )
    from .spectral import (
        DEFAULT_K_MAX,
        StabilityReport,
        dirichlet_eigenpairs,
        fbar_eigenvalue,
        mode_coefficients,
        stability_threshold,
    )
except ImportError:
    from evolution import (
        ControlSignal,
        HorizonGrid,
        needle_variation_cost,
        solve_adjoint,
        solve_forward,
        stage_cost,
    )
    from galerkin import (
        ControlSupport,
        FemOperators,
        ObservationWindow,
        assemble_operators,
        build_mesh,
        project_initial,
    )
    from logging_config import logger
    from lqr import lqr_gain, run_lqr_closed_loop, solve_care
    from models import (
        AlphaPolicy,
        ClosedLoopResult,
        ConfigError,
        FixedAlpha,
        ProportionalAlpha,
        ScenarioConfig,
    )
    from sac import (
        choose_alpha_d,
        mode_insertion_gradient,
        run_receding_horizon,
        sac_action_at,
    )
    from spectral import (
        DEFAULT_K_MAX,
        StabilityReport,
        dirichlet_eigenpairs,
        fbar_eigenvalue,
        mode_coefficients,
        stability_threshold,
    )

WORKERS_ENV = "SAC_PDE_WORKERS"
SWEEP_PARAMETERS = ("gamma", "horizon", "obs_window")
CHECKPOINTS = (0.5, 1.0, 2.0)
SPEEDUP_TARGET = 10.0


def perturb_mu(mu_nominal: float, level: float, rng: np.random.Generator) -> float:
    """mu_nominal (1 + xi), xi uniform on [-level, level]; one draw from ``rng``."""
    if not 0 <= level < 1:
        raise ValueError(f"disturbance level must lie in [0, 1), got {level}")
    return mu_nominal * (1.0 + rng.uniform(-level, level))


@dataclass(frozen=True, eq=False)
class DisturbanceSequence:
    """Realized mu per sampling interval from a seeded PCG64 stream."""

    mu_nominal: float
    level: float
    seed: int
    n_samples: int
    values: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rng = np.random.Generator(np.random.PCG64(self.seed))
        values = np.array(
            [
                perturb_mu(self.mu_nominal, self.level, rng)
                for _ in range(self.n_samples)
            ]
        )
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.n_samples

    def __getitem__(self, index):
        return self.values[index]

    @property
    def digest(self) -> str:
        """SHA-256 of the draws as little-endian float64."""
        return hashlib.sha256(self.values.astype("<f8").tobytes()).hexdigest()


@dataclass
class ScenarioSetup:
    model: FemOperators
    plant: FemOperators
    y0: np.ndarray
    disturbance: DisturbanceSequence


def _support(interval, length: float):
    if interval is None:
        return ControlSupport(0.0, length)
    return ControlSupport(*interval)


def build_setup(cfg: ScenarioConfig) -> ScenarioSetup:
    """Assemble the predictive model, the realized plant and the initial state."""
    cfg.check()
    plant_cfg = cfg.plant
    mesh = build_mesh(plant_cfg.length, plant_cfg.n_elements)
    window = cfg.control.observation or (0.0, plant_cfg.length)
    plant = assemble_operators(
        mesh,
        plant_cfg.mu,
        plant_cfg.beta,
        _support(cfg.control.support, plant_cfg.length),
        ObservationWindow(window[0], window[1], cfg.control.q_bar),
        cfg.control.r_weight,
    )
    model = plant if cfg.model_mu == plant.mu else plant.with_mu(cfg.model_mu)
    y0 = project_initial(mesh, plant_cfg.initial, plant.mass)
    disturbance = DisturbanceSequence(
        plant_cfg.mu, cfg.disturbance.level, cfg.disturbance.seed, cfg.n_samples
    )
    return ScenarioSetup(model=model, plant=plant, y0=y0, disturbance=disturbance)


def _draws(setup: ScenarioSetup, cfg: ScenarioConfig) -> Optional[DisturbanceSequence]:
    return setup.disturbance if cfg.disturbance.level > 0 else None


def run_sac(
    cfg: ScenarioConfig, setup: Optional[ScenarioSetup] = None
) -> ClosedLoopResult:
    setup = setup or build_setup(cfg)
    result = run_receding_horizon(
        setup.model,
        setup.y0,
        cfg.sac,
        cfg.simulation.duration,
        disturbance=_draws(setup, cfg),
        plant=setup.plant,
    )
    result.disturbance_digest = setup.disturbance.digest
    return result


def run_lqr(
    cfg: ScenarioConfig, setup: Optional[ScenarioSetup] = None
) -> ClosedLoopResult:
    setup = setup or build_setup(cfg)
    solution = solve_care(setup.model, cfg.lqr.tolerance, cfg.lqr.max_iterations)
    gain = lqr_gain(setup.model, solution.P)
    result = run_lqr_closed_loop(
        setup.model,
        setup.y0,
        gain,
        cfg.simulation.duration,
        cfg.sac.sampling_time,
        disturbance=_draws(setup, cfg),
        steps_per_sample=cfg.sac.steps_per_sample,
        offline_time=solution.solve_time,
        plant=setup.plant,
    )
    result.disturbance_digest = setup.disturbance.digest
    return result


def run_scenario(cfg: ScenarioConfig, output_dir=None) -> ClosedLoopResult:
    """Run the configured method; write the simulation series to ``output_dir``."""
    method = cfg.simulation.method
    logger.info("running %s scenario for %.3gs", method, cfg.simulation.duration)
    result = run_lqr(cfg) if method == "lqr" else run_sac(cfg)
    if output_dir is not None:
        try:
            from .outputs import write_simulation
        except ImportError:
            from outputs import write_simulation
        write_simulation(output_dir, cfg, result)
    return result


def decay_rate_fit(
    times, errors, window: Optional[Tuple[float, float]] = None
) -> float:
    """Least-squares slope of log(error) over ``window`` (whole series when None)."""
    times = np.asarray(times, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if window is not None:
        mask = (times >= window[0] - 1e-12) & (times <= window[1] + 1e-12)
        times, errors = times[mask], errors[mask]
    if times.size < 2:
        raise ValueError("decay-rate fit needs at least two points in the window")
    if np.any(errors <= 0):
        raise ValueError("decay-rate fit needs strictly positive errors")
    return float(np.polyfit(times, np.log(errors), 1)[0])


def crossing_time(result: ClosedLoopResult, threshold: float) -> Optional[float]:
    """First sampling instant with error <= threshold * initial error, or None."""
    limit = threshold * result.errors[0]
    hits = np.flatnonzero(result.errors <= limit)
    return float(result.times[hits[0]]) if hits.size else None


def plateau_error(result: ClosedLoopResult, fraction: float = 1.0 / 3.0) -> float:
    """Geometric mean of the error over the final ``fraction`` of the run."""
    tail = result.errors[-max(2, int(round(fraction * result.errors.size))) :]
    return float(np.exp(np.mean(np.log(np.maximum(tail, 1e-300)))))


def error_at(result: ClosedLoopResult, t: float) -> float:
    return float(np.interp(t, result.times, result.errors))


def summarize(
    result: ClosedLoopResult, acceptable_error: float = 0.05
) -> Dict[str, Any]:
    summary: Dict[str, Any] = {
        f"error_t{t:g}": error_at(result, t)
        for t in CHECKPOINTS
        if t <= result.times[-1]
    }
    summary["error_final"] = float(result.errors[-1])
    summary["plateau_error"] = plateau_error(result)
    summary["crossing_time"] = crossing_time(result, acceptable_error)
    summary["mean_step_time"] = result.mean_step_time
    positive = result.errors > 0
    if np.count_nonzero(positive[: result.times.searchsorted(1.0, side="right")]) >= 2:
        summary["decay_rate"] = decay_rate_fit(result.times, result.errors, (0.0, 1.0))
    else:
        summary["decay_rate"] = None
    return summary


def apply_parameter(cfg: ScenarioConfig, parameter: str, value) -> ScenarioConfig:
    if parameter == "gamma":
        policy = ProportionalAlpha(float(value))
        return replace(cfg, sac=replace(cfg.sac, alpha_policy=policy))
    if parameter == "horizon":
        return replace(cfg, sac=replace(cfg.sac, horizon=float(value)))
    if parameter == "obs_window":
        a, b = value
        window = (float(a), float(b))
        return replace(cfg, control=replace(cfg.control, observation=window))
    raise ConfigError(
        f"cannot sweep {parameter!r}; choose one of {', '.join(SWEEP_PARAMETERS)}",
        key="sweep.parameter",
    )


@dataclass
class SweepResult:
    parameter: str
    values: List[Any]
    results: List[Optional[ClosedLoopResult]]
    summaries: List[Optional[Dict[str, Any]]]
    failures: List[Tuple[Any, str]] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failures) or any(r is None for r in self.results)

    @property
    def times(self) -> Optional[np.ndarray]:
        for result in self.results:
            if result is not None:
                return result.times
        return None


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        workers = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    if workers < 1:
        raise ConfigError(f"{WORKERS_ENV} must be at least 1, got {workers}")
    return workers


def sweep(
    base_cfg: ScenarioConfig,
    parameter: str,
    values: Sequence[Any],
    workers: Optional[int] = None,
    progress=None,
) -> SweepResult:
    """Run one scenario per value, sharing everything else.

    Rows come back in the order of ``values``. The first failure stops the
    sweep; rows not run stay ``None`` and the result is flagged partial.
    ``progress`` is called with (index, value) as each row completes.
    """
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    configs = [apply_parameter(base_cfg, parameter, value) for value in values]
    for cfg in configs:
        cfg.check()
    workers = worker_count() if workers is None else workers
    results: List[Optional[ClosedLoopResult]] = [None] * len(values)
    failures: List[Tuple[Any, str]] = []

    if workers == 1:
        for i, cfg in enumerate(configs):
            try:
                results[i] = run_scenario(cfg)
            except Exception as exc:
                logger.error("sweep %s=%s failed: %s", parameter, values[i], exc)
                failures.append((values[i], str(exc)))
                break
            if progress:
                progress(i, values[i])
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_scenario, cfg) for cfg in configs]
            for i, future in enumerate(futures):
                try:
                    results[i] = future.result()
                except Exception as exc:
                    logger.error("sweep %s=%s failed: %s", parameter, values[i], exc)
                    failures.append((values[i], str(exc)))
                    for pending in futures[i + 1 :]:
                        pending.cancel()
                    break
                if progress:
                    progress(i, values[i])

    acceptable = base_cfg.simulation.acceptable_error
    summaries = [summarize(r, acceptable) if r is not None else None for r in results]
    return SweepResult(parameter, values, results, summaries, failures)


@dataclass
class ComparisonReport:
    sac: ClosedLoopResult
    lqr: ClosedLoopResult
    acceptable_error: float
    sac_crossing: Optional[float]
    lqr_crossing: Optional[float]

    @property
    def care_time(self) -> float:
        return self.lqr.offline_time

    @property
    def sac_step_time(self) -> float:
        return self.sac.mean_step_time

    @property
    def lqr_step_time(self) -> float:
        return self.lqr.mean_step_time

    @property
    def speedup(self) -> float:
        """CARE solve time over the mean SAC per-sample compute time."""
        if self.sac_step_time <= 0:
            return math.inf
        return self.care_time / self.sac_step_time

    @property
    def same_disturbance(self) -> bool:
        return self.sac.disturbance_digest == self.lqr.disturbance_digest

    @property
    def crossing_order_ok(self) -> bool:
        """SAC reaches the acceptable error no later than LQR."""
        if self.sac_crossing is None:
            return False
        return self.lqr_crossing is None or self.sac_crossing <= self.lqr_crossing

    @property
    def speed_ok(self) -> bool:
        """Mean SAC per-sample compute at least SPEEDUP_TARGET times below CARE."""
        return self.speedup >= SPEEDUP_TARGET

    @property
    def checks(self) -> Dict[str, bool]:
        return {"crossing_order": self.crossing_order_ok, "speed": self.speed_ok}

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def compare_sac_lqr(cfg: ScenarioConfig) -> ComparisonReport:
    """Both methods on one plant, initial state, sampling and disturbance sequence."""
    setup = build_setup(cfg)
    sac_result = run_sac(cfg, setup)
    lqr_result = run_lqr(cfg, setup)
    threshold = cfg.simulation.acceptable_error
    report = ComparisonReport(
        sac=sac_result,
        lqr=lqr_result,
        acceptable_error=threshold,
        sac_crossing=crossing_time(sac_result, threshold),
        lqr_crossing=crossing_time(lqr_result, threshold),
    )
    if not report.same_disturbance:
        raise RuntimeError("SAC and LQR runs consumed different disturbance sequences")
    if not report.crossing_order_ok:
        logger.warning(
            "SAC crossing (%s) is later than LQR crossing (%s)",
            report.sac_crossing,
            report.lqr_crossing,
        )
    if not report.speed_ok:
        logger.warning(
            "SAC per-sample compute (%.3gs) is not %gx below the CARE solve (%.3gs)",
            report.sac_step_time,
            SPEEDUP_TARGET,
            report.care_time,
        )
    return report


@dataclass
class GradientCheckRow:
    tau: float
    analytic: float
    finite_difference: float

    @property
    def relative_error(self) -> float:
        scale = max(abs(self.analytic), 1e-300)
        return abs(self.finite_difference - self.analytic) / scale


@dataclass
class GradientCheckResult:
    rows: List[GradientCheckRow]
    needle_duration: float

    @property
    def max_relative_error(self) -> float:
        return max(row.relative_error for row in self.rows)


def default_taus(grid: HorizonGrid, count: int = 5) -> List[float]:
    """``count`` interior grid points spread evenly over the horizon."""
    fractions = (np.arange(count) + 0.5) / count
    return [
        float(grid.times[grid.index_of(grid.t0 + f * grid.horizon)])
        for f in fractions
    ]


def gradient_check(
    cfg: ScenarioConfig, taus: Optional[Sequence[float]] = None, lam: float = 1e-4
) -> GradientCheckResult:
    """Mode insertion gradient against Richardson-extrapolated needle differences.

    The state starts from the configured initial profile with u1 = 0, and the
    inserted value at each tau is the SAC action there. The analytic value uses
    the exact discrete adjoint of the forward scheme.
    """
    setup = build_setup(cfg)
    ops = setup.model
    sac_cfg = cfg.sac
    grid = HorizonGrid(0.0, sac_cfg.horizon_steps * sac_cfg.dt, sac_cfg.horizon_steps)
    terminal = sac_cfg.terminal_weight if sac_cfg.terminal_weight > 0 else None
    u1 = ControlSignal.zeros(grid, ops.n_control)
    forward = solve_forward(ops, setup.y0, u1, grid)
    j1 = stage_cost(ops, forward, terminal)
    adjoint = solve_adjoint(ops, forward, terminal, scheme="discrete")
    alpha_d = choose_alpha_d(sac_cfg.alpha_policy, j1) if j1 > 0 else -1.0
    zero = np.zeros(ops.n_control)

    rows = []
    for tau in taus if taus is not None else default_taus(grid):
        k = grid.index_of(tau)
        tau = float(grid.times[k])
        p = adjoint.states[k]
        v = sac_action_at(ops, p, zero, alpha_d)
        analytic = mode_insertion_gradient(ops, p, zero, v)

        def quotient(width: float) -> float:
            cost = needle_variation_cost(
                ops, setup.y0, u1, tau, v, width, grid, terminal
            )
            return (cost - j1) / width

        extrapolated = 2.0 * quotient(0.5 * lam) - quotient(lam)
        rows.append(
            GradientCheckRow(tau=tau, analytic=analytic, finite_difference=extrapolated)
        )
        logger.debug(
            "gradient check tau=%.3f analytic=%.8g fd=%.8g", tau, analytic, extrapolated
        )
    return GradientCheckResult(rows=rows, needle_duration=lam)


@dataclass
class StabilityAnalysis:
    report: StabilityReport
    alpha_d: Optional[float]
    initial_cost: float
    rates: Optional[np.ndarray]
    policy: Optional[AlphaPolicy] = None

    @property
    def verdict(self) -> Optional[bool]:
        return None if self.alpha_d is None else self.report.verdict(self.alpha_d)

    @property
    def gamma(self) -> Optional[float]:
        if isinstance(self.policy, ProportionalAlpha):
            return self.policy.gamma
        return None

    @property
    def gamma_ok(self) -> Optional[bool]:
        """gamma below the necessary bound, or None for a fixed alpha_d."""
        if self.gamma is None:
            return None
        return self.gamma < self.report.gamma_bar


def analyze_stability(
    cfg: ScenarioConfig, k_max: int = DEFAULT_K_MAX
) -> StabilityAnalysis:
    """Modal stability report for the first-order SAC feedback of ``cfg``.

    The candidate alpha_d is the fixed value, or gamma times the modal J1 of
    the initial profile when alpha_d is proportional.
    """
    cfg.check()
    plant = cfg.plant
    if not cfg.control.full_support(plant.length):
        raise ConfigError(
            "modal stability analysis needs full-domain control",
            key="control.support",
        )
    if not cfg.control.full_observation(plant.length):
        raise ConfigError(
            "modal stability analysis needs full-domain observation",
            key="control.observation",
        )
    q_bar = cfg.control.q_bar
    horizon = cfg.sac.horizon
    spectrum = mode_coefficients(
        plant.initial, dirichlet_eigenpairs(plant.length, plant.mu, k_max)
    )
    report = stability_threshold(spectrum, plant.beta, q_bar, horizon)
    fbar = np.array([fbar_eigenvalue(d, q_bar, horizon) for d in spectrum.deltas])
    initial_cost = 0.5 * float(np.sum(spectrum.chi ** 2 * fbar))

    policy = cfg.sac.alpha_policy
    alpha_d: Optional[float]
    if isinstance(policy, FixedAlpha):
        alpha_d = policy.alpha
    elif initial_cost > 0:
        alpha_d = choose_alpha_d(policy, initial_cost)
    else:
        alpha_d = None
    rates = report.rates(alpha_d) if alpha_d is not None else None
    return StabilityAnalysis(
        report=report,
        alpha_d=alpha_d,
        initial_cost=initial_cost,
        rates=rates,
        policy=policy,
    )
