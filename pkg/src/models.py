"""Configuration models, result containers and exceptions for sac-pde."""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple, Union

import numpy as np


class SacPdeError(Exception):
    """Base class for all sac-pde errors."""


class ConfigError(SacPdeError, ValueError):
    """Invalid configuration value, optionally tied to a key path and line."""

    def __init__(
        self, message: str, key: Optional[str] = None, line: Optional[int] = None
    ):
        self.message = message
        self.key = key
        self.line = line
        super().__init__(self.__str__())

    def __str__(self) -> str:
        prefix = ""
        if self.key:
            prefix = self.key
            if self.line is not None:
                prefix += f" (line {self.line})"
            prefix += ": "
        elif self.line is not None:
            prefix = f"line {self.line}: "
        return prefix + self.message


class NumericalError(SacPdeError, RuntimeError):
    """A solver could not produce a trustworthy result."""


Interval = Tuple[float, float]


@dataclass(frozen=True)
class InitialProfile:
    """Initial temperature profile y0(x) = amplitude * sin(mode * pi * x / L)."""

    kind: str = "sine"
    amplitude: float = 0.2
    mode: int = 1
    length: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        return self.amplitude * np.sin(self.mode * math.pi * x / self.length)

    def validate(self) -> List[str]:
        errors = []
        if self.kind not in ("sine", "zero"):
            errors.append(
                f"initial profile must be 'sine' or 'zero', got {self.kind!r}"
            )
        if self.mode < 1:
            errors.append("initial mode must be at least 1")
        return errors


@dataclass(frozen=True)
class PlantConfig:
    """Reaction-diffusion plant; defaults are the reference scenario."""

    length: float = 1.0
    mu: float = 1.35 * math.pi ** 2
    beta: float = 1.6
    n_elements: int = 100
    initial: InitialProfile = field(default_factory=InitialProfile)

    def validate(self) -> List[str]:
        errors = []
        if not self.length > 0:
            errors.append("plant length must be positive")
        if self.n_elements < 2:
            errors.append("n_elements must be at least 2")
        if not self.beta > 0:
            errors.append("beta must be positive")
        errors.extend(self.initial.validate())
        if self.initial.length != self.length:
            errors.append("initial profile length does not match the plant length")
        return errors


def _interval_errors(
    name: str, interval: Optional[Interval], length: float
) -> List[str]:
    if interval is None:
        return []
    a, b = interval
    if not (0.0 <= a < b <= length):
        return [f"{name} ({a}, {b}) must satisfy 0 <= a < b <= {length}"]
    return []


def _covers(interval: Optional[Interval], length: float) -> bool:
    return interval is None or (interval[0] <= 0.0 and interval[1] >= length)


@dataclass(frozen=True)
class ControlConfig:
    """Where the plant is actuated and observed, and the cost weights.

    ``support`` / ``observation`` of ``None`` mean the full domain.
    """

    support: Optional[Interval] = None
    observation: Optional[Interval] = None
    q_bar: float = 10.0
    r_weight: float = 1.0

    def validate(self, length: float = 1.0) -> List[str]:
        errors = _interval_errors("control support", self.support, length)
        errors += _interval_errors("observation window", self.observation, length)
        if self.q_bar < 0:
            errors.append("q_bar must be nonnegative")
        if not self.r_weight > 0:
            errors.append("r_weight must be positive")
        return errors

    def full_support(self, length: float) -> bool:
        return _covers(self.support, length)

    def full_observation(self, length: float) -> bool:
        return _covers(self.observation, length)


@dataclass(frozen=True)
class FixedAlpha:
    """Use the same target rate alpha_d on every sample."""

    alpha: float

    def validate(self) -> List[str]:
        return [] if self.alpha < 0 else ["alpha must be negative"]


@dataclass(frozen=True)
class ProportionalAlpha:
    """alpha_d = gamma * J1 of the nominal prediction."""

    gamma: float

    def validate(self) -> List[str]:
        return [] if self.gamma < 0 else ["gamma must be negative"]


AlphaPolicy = Union[FixedAlpha, ProportionalAlpha]


@dataclass(frozen=True)
class FixedDuration:
    """Apply the action for ``duration`` (the sampling time when ``None``)."""

    duration: Optional[float] = None

    def validate(self) -> List[str]:
        if self.duration is not None and not self.duration > 0:
            return ["fixed duration must be positive"]
        return []


@dataclass(frozen=True)
class LineSearchDuration:
    """Backtracking search on the needle duration."""

    max_duration: Optional[float] = None
    shrink: float = 0.5
    max_trials: int = 8

    def validate(self) -> List[str]:
        errors = []
        if self.max_duration is not None and not self.max_duration > 0:
            errors.append("max_duration must be positive")
        if not 0 < self.shrink < 1:
            errors.append("shrink must lie in (0, 1)")
        if self.max_trials < 1:
            errors.append("max_trials must be at least 1")
        return errors


DurationPolicy = Union[FixedDuration, LineSearchDuration]


class ApplicationTime(str, Enum):
    FIRST_SAMPLE = "first_sample"
    MIN_GRADIENT = "min_gradient"


@dataclass(frozen=True)
class SacConfig:
    """All SAC tuning."""

    horizon: float = 1.0
    sampling_time: float = 0.1
    alpha_policy: AlphaPolicy = field(default_factory=lambda: ProportionalAlpha(-15.0))
    duration_policy: DurationPolicy = field(default_factory=FixedDuration)
    saturation: Optional[Interval] = None
    application_time: ApplicationTime = ApplicationTime.FIRST_SAMPLE
    calculation_time: float = 0.0
    steps_per_sample: int = 10
    terminal_weight: float = 0.0

    @property
    def dt(self) -> float:
        """Inner time step of prediction and realized plant."""
        return self.sampling_time / self.steps_per_sample

    @property
    def horizon_steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))

    def duration_for(self) -> float:
        policy = self.duration_policy
        if isinstance(policy, FixedDuration) and policy.duration is not None:
            return policy.duration
        if isinstance(policy, LineSearchDuration) and policy.max_duration is not None:
            return policy.max_duration
        return self.sampling_time

    def validate(self) -> List[str]:
        errors = []
        if not self.horizon > 0:
            errors.append("horizon T must be positive")
        if not 0 < self.sampling_time <= self.horizon:
            errors.append("sampling time must satisfy 0 < t_s <= T")
        errors.extend(self.alpha_policy.validate())
        errors.extend(self.duration_policy.validate())
        if self.duration_for() > self.sampling_time * (1 + 1e-12):
            errors.append("action duration must not exceed the sampling time")
        if self.saturation is not None and not self.saturation[0] < self.saturation[1]:
            errors.append("saturation bounds must satisfy lo < hi")
        if not 0 <= self.calculation_time < self.sampling_time:
            errors.append("calculation time must lie in [0, t_s)")
        if self.steps_per_sample < 1:
            errors.append("steps_per_sample must be at least 1")
        if self.terminal_weight < 0:
            errors.append("terminal_weight must be nonnegative")
        return errors

    def is_valid(self) -> bool:
        return len(self.validate()) == 0


@dataclass(frozen=True)
class LqrConfig:
    tolerance: float = 1e-8
    max_iterations: int = 50

    def validate(self) -> List[str]:
        errors = []
        if not self.tolerance > 0:
            errors.append("lqr tolerance must be positive")
        if self.max_iterations < 1:
            errors.append("lqr max_iterations must be at least 1")
        return errors


@dataclass(frozen=True)
class SimulationConfig:
    duration: float = 3.0
    method: str = "sac"
    acceptable_error: float = 0.05

    def validate(self, sampling_time: float = 0.1) -> List[str]:
        errors = []
        if not self.duration > 0:
            errors.append("simulation duration must be positive")
        else:
            ratio = self.duration / sampling_time
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                errors.append(
                    "simulation duration must be a multiple of the sampling time"
                )
        if self.method not in ("sac", "lqr"):
            errors.append(f"method must be 'sac' or 'lqr', got {self.method!r}")
        if not 0 < self.acceptable_error < 1:
            errors.append("acceptable_error must lie in (0, 1)")
        return errors


@dataclass(frozen=True)
class DisturbanceConfig:
    """Random multiplicative perturbation of mu on the realized plant."""

    level: float = 0.0
    seed: int = 0
    model_mu: Optional[float] = None

    def validate(self) -> List[str]:
        errors = []
        if not 0 <= self.level < 1:
            errors.append("disturbance level must lie in [0, 1)")
        if self.seed < 0:
            errors.append("seed must be nonnegative")
        return errors


@dataclass(frozen=True)
class OutputConfig:
    state_snapshots: bool = True
    error_series: bool = True
    cost_series: bool = True
    control_snapshots: bool = True
    snapshot_stride: int = 1
    plot_script: bool = True

    def validate(self) -> List[str]:
        if self.snapshot_stride >= 1:
            return []
        return ["snapshot_stride must be at least 1"]


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to run one closed-loop scenario."""

    plant: PlantConfig = field(default_factory=PlantConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    lqr: LqrConfig = field(default_factory=LqrConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def n_samples(self) -> int:
        return int(round(self.simulation.duration / self.sac.sampling_time))

    @property
    def model_mu(self) -> float:
        """mu used by the predictive model."""
        if self.disturbance.model_mu is not None:
            return self.disturbance.model_mu
        return self.plant.mu

    def validate(self) -> List[str]:
        errors = []
        errors.extend(self.plant.validate())
        errors.extend(self.control.validate(self.plant.length))
        errors.extend(self.sac.validate())
        errors.extend(self.lqr.validate())
        errors.extend(self.simulation.validate(self.sac.sampling_time))
        errors.extend(self.disturbance.validate())
        errors.extend(self.output.validate())
        return errors

    def is_valid(self) -> bool:
        return len(self.validate()) == 0

    def check(self) -> "ScenarioConfig":
        """Raise ConfigError on the first validation error."""
        errors = self.validate()
        if errors:
            raise ConfigError(errors[0])
        return self


@dataclass
class ClosedLoopResult:
    """Series recorded by a closed-loop run on the sampling grid.

    ``times`` and ``states`` / ``errors`` have one entry per sampling instant
    (including t = 0); the per-interval series have one entry per sample.
    """

    method: str
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    errors: np.ndarray
    costs: np.ndarray
    compute_times: np.ndarray
    alpha_d: Optional[np.ndarray] = None
    taus: Optional[np.ndarray] = None
    durations: Optional[np.ndarray] = None
    gradients: Optional[np.ndarray] = None
    cost_decrease_flags: Optional[np.ndarray] = None
    realized_mu: Optional[np.ndarray] = None
    disturbance_digest: Optional[str] = None
    offline_time: float = 0.0

    @property
    def n_samples(self) -> int:
        return len(self.times) - 1

    @property
    def mean_step_time(self) -> float:
        if len(self.compute_times) == 0:
            return 0.0
        return float(np.mean(self.compute_times))

    def validate(self) -> List[str]:
        errors = []
        n = self.n_samples
        if self.states.shape[0] != n + 1 or self.errors.shape[0] != n + 1:
            errors.append("snapshot count must equal step count + 1")
        for name in ("controls", "costs", "compute_times"):
            if getattr(self, name).shape[0] != n:
                errors.append(f"{name} must have one entry per sample")
        return errors
