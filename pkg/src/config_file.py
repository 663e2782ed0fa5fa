"""Scenario configuration files.

Sections ``[plant]``, ``[control]``, ``[sac]``, ``[lqr]``, ``[simulation]``,
``[disturbance]`` and ``[output]`` hold ``key = value`` lines; ``#`` starts a
comment. Numbers may carry a factor of pi^2 (``1.35*pi^2``), pairs are written
``a, b`` and may use ``L`` for the domain length.
"""

import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Union

try:
    from .models import (
        ApplicationTime,
        ConfigError,
        ControlConfig,
        DisturbanceConfig,
        FixedAlpha,
        FixedDuration,
        InitialProfile,
        LineSearchDuration,
        LqrConfig,
        OutputConfig,
        PlantConfig,
        ProportionalAlpha,
        SacConfig,
        ScenarioConfig,
        SimulationConfig,
    )
except ImportError:
    from models import (
        ApplicationTime,
        ConfigError,
        ControlConfig,
        DisturbanceConfig,
        FixedAlpha,
        FixedDuration,
        InitialProfile,
        LineSearchDuration,
        LqrConfig,
        OutputConfig,
        PlantConfig,
        ProportionalAlpha,
        SacConfig,
        ScenarioConfig,
        SimulationConfig,
    )

_NUMBER = re.compile(
    r"^(?P<coef>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*"
    r"(?:(?P<star>\*)\s*)?(?P<pi>pi(?:\^2|\*\*2)?)?$"
)


def parse_number(text: str) -> float:
    """Float literal, optionally times ``pi``, ``pi^2`` or ``pi**2``."""
    match = _NUMBER.match(text.strip())
    if not match or not (match.group("coef") or match.group("pi")):
        raise ValueError(f"expected a number, got {text!r}")
    if match.group("star") and not (match.group("coef") and match.group("pi")):
        raise ValueError(f"expected a number, got {text!r}")
    value = float(match.group("coef")) if match.group("coef") else 1.0
    factor = match.group("pi")
    if factor:
        value *= math.pi if factor == "pi" else math.pi ** 2
    return value


def parse_int(text: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ValueError(f"expected an integer, got {text!r}") from None


def parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def parse_pair(text: str) -> Tuple[Union[float, str], Union[float, str]]:
    parts = [part.strip() for part in text.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected a pair 'a, b', got {text!r}")
    values = [part if part == "L" else parse_number(part) for part in parts]
    return values[0], values[1]


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        value = text.strip()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {value!r}")
        return value

    return parse


def _positive(value) -> Optional[str]:
    return None if value > 0 else "must be positive"


def _negative(value) -> Optional[str]:
    return None if value < 0 else "must be negative"


def _nonnegative(value) -> Optional[str]:
    return None if value >= 0 else "must be nonnegative"


def _at_least(bound: int) -> Callable[[Any], Optional[str]]:
    return lambda value: None if value >= bound else f"must be at least {bound}"


def _open_unit(value) -> Optional[str]:
    return None if 0 < value < 1 else "must lie in (0, 1)"


def _half_open_unit(value) -> Optional[str]:
    return None if 0 <= value < 1 else "must lie in [0, 1)"


def _no_check(value) -> Optional[str]:
    return None


@dataclass(frozen=True)
class KeySpec:
    parse: Callable[[str], Any]
    check: Callable[[Any], Optional[str]] = _no_check


SCHEMA: Dict[str, Dict[str, KeySpec]] = {
    "plant": {
        "length": KeySpec(parse_number, _positive),
        "mu": KeySpec(parse_number),
        "beta": KeySpec(parse_number, _positive),
        "n_elements": KeySpec(parse_int, _at_least(2)),
        "initial": KeySpec(_choice("sine", "zero")),
        "amplitude": KeySpec(parse_number),
        "mode": KeySpec(parse_int, _at_least(1)),
    },
    "control": {
        "support": KeySpec(parse_pair),
        "observation": KeySpec(parse_pair),
        "q_bar": KeySpec(parse_number, _nonnegative),
        "r_weight": KeySpec(parse_number, _positive),
    },
    "sac": {
        "horizon": KeySpec(parse_number, _positive),
        "sampling_time": KeySpec(parse_number, _positive),
        "gamma": KeySpec(parse_number, _negative),
        "alpha": KeySpec(parse_number, _negative),
        "duration": KeySpec(_choice("fixed", "line_search")),
        "max_duration": KeySpec(parse_number, _positive),
        "shrink": KeySpec(parse_number, _open_unit),
        "max_trials": KeySpec(parse_int, _at_least(1)),
        "saturation": KeySpec(parse_pair),
        "application_time": KeySpec(_choice(*(item.value for item in ApplicationTime))),
        "calculation_time": KeySpec(parse_number, _nonnegative),
        "steps_per_sample": KeySpec(parse_int, _at_least(1)),
        "terminal_weight": KeySpec(parse_number, _nonnegative),
    },
    "lqr": {
        "tolerance": KeySpec(parse_number, _positive),
        "max_iterations": KeySpec(parse_int, _at_least(1)),
    },
    "simulation": {
        "duration": KeySpec(parse_number, _positive),
        "method": KeySpec(_choice("sac", "lqr")),
        "acceptable_error": KeySpec(parse_number, _open_unit),
    },
    "disturbance": {
        "level": KeySpec(parse_number, _half_open_unit),
        "seed": KeySpec(parse_int, _at_least(0)),
        "model_mu": KeySpec(parse_number),
    },
    "output": {
        "state_snapshots": KeySpec(parse_bool),
        "error_series": KeySpec(parse_bool),
        "cost_series": KeySpec(parse_bool),
        "control_snapshots": KeySpec(parse_bool),
        "snapshot_stride": KeySpec(parse_int, _at_least(1)),
        "plot_script": KeySpec(parse_bool),
    },
}


def _read_sections(text: str) -> Dict[str, Dict[str, Tuple[Any, int]]]:
    sections: Dict[str, Dict[str, Tuple[Any, int]]] = {name: {} for name in SCHEMA}
    current: Optional[str] = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("malformed section header", line=number)
            current = line[1:-1].strip()
            if current not in SCHEMA:
                raise ConfigError("unknown section", key=current, line=number)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=number)
        key, value = (part.strip() for part in line.split("=", 1))
        if current is None:
            raise ConfigError("key outside of any section", key=key, line=number)
        path = f"{current}.{key}"
        spec = SCHEMA[current].get(key)
        if spec is None:
            raise ConfigError("unknown key", key=path, line=number)
        if key in sections[current]:
            raise ConfigError("duplicate key", key=path, line=number)
        try:
            parsed = spec.parse(value)
        except ValueError as exc:
            raise ConfigError(str(exc), key=path, line=number) from None
        problem = spec.check(parsed)
        if problem:
            raise ConfigError(f"{key} {problem}", key=path, line=number)
        sections[current][key] = (parsed, number)
    return sections


def _resolve_interval(value, length: float, full_is_none: bool = True):
    """``0, L`` is the full domain (None); explicit bounds are kept as written."""
    if full_is_none and value[1] == "L" and value[0] == 0.0:
        return None
    a, b = (length if part == "L" else part for part in value)
    return (a, b)


# validation message prefix -> keys to blame, first one present in the file wins
_VALIDATION_KEYS: Tuple[Tuple[str, Tuple[str, ...]], ...] = (
    ("plant length", ("plant.length",)),
    ("n_elements", ("plant.n_elements",)),
    ("beta", ("plant.beta",)),
    ("initial profile length", ("plant.length",)),
    ("initial profile", ("plant.initial",)),
    ("initial mode", ("plant.mode",)),
    ("control support", ("control.support", "plant.length")),
    ("observation window", ("control.observation", "plant.length")),
    ("q_bar", ("control.q_bar",)),
    ("r_weight", ("control.r_weight",)),
    ("horizon T", ("sac.horizon",)),
    ("sampling time", ("sac.sampling_time", "sac.horizon")),
    ("gamma", ("sac.gamma",)),
    ("alpha", ("sac.alpha",)),
    ("fixed duration", ("sac.max_duration",)),
    ("max_duration", ("sac.max_duration",)),
    ("shrink", ("sac.shrink",)),
    ("max_trials", ("sac.max_trials",)),
    ("action duration", ("sac.max_duration", "sac.sampling_time")),
    ("saturation", ("sac.saturation",)),
    ("calculation time", ("sac.calculation_time", "sac.sampling_time")),
    ("steps_per_sample", ("sac.steps_per_sample",)),
    ("terminal_weight", ("sac.terminal_weight",)),
    ("lqr tolerance", ("lqr.tolerance",)),
    ("lqr max_iterations", ("lqr.max_iterations",)),
    ("simulation duration", ("simulation.duration", "sac.sampling_time")),
    ("method", ("simulation.method",)),
    ("acceptable_error", ("simulation.acceptable_error",)),
    ("disturbance level", ("disturbance.level",)),
    ("seed", ("disturbance.seed",)),
    ("snapshot_stride", ("output.snapshot_stride",)),
)


def _blame(
    message: str, line_of: Callable[[str, str], Optional[int]]
) -> Tuple[Optional[str], Optional[int]]:
    for prefix, paths in _VALIDATION_KEYS:
        if not message.startswith(prefix):
            continue
        for path in paths:
            line = line_of(*path.split(".", 1))
            if line is not None:
                return path, line
        return paths[0], None
    return None, None


def parse_config_text(text: str) -> ScenarioConfig:
    """Build a ScenarioConfig from config text; omitted keys keep their defaults."""
    sections = _read_sections(text)

    def values(name: str) -> Dict[str, Any]:
        return {key: parsed for key, (parsed, _) in sections[name].items()}

    def line_of(name: str, key: str) -> Optional[int]:
        entry = sections[name].get(key)
        return entry[1] if entry else None

    plant_values = values("plant")
    length = plant_values.get("length", PlantConfig.length)
    initial = InitialProfile(
        kind=plant_values.pop("initial", InitialProfile.kind),
        amplitude=plant_values.pop("amplitude", InitialProfile.amplitude),
        mode=plant_values.pop("mode", InitialProfile.mode),
        length=length,
    )
    plant = PlantConfig(initial=initial, **plant_values)

    control_values = values("control")
    for key in ("support", "observation"):
        if key in control_values:
            control_values[key] = _resolve_interval(control_values[key], length)
    control = ControlConfig(**control_values)

    sac_values = values("sac")
    if "gamma" in sac_values and "alpha" in sac_values:
        raise ConfigError(
            "give either gamma or alpha, not both",
            key="sac.alpha",
            line=line_of("sac", "alpha"),
        )
    kwargs: Dict[str, Any] = {}
    if "alpha" in sac_values:
        kwargs["alpha_policy"] = FixedAlpha(sac_values.pop("alpha"))
    elif "gamma" in sac_values:
        kwargs["alpha_policy"] = ProportionalAlpha(sac_values.pop("gamma"))
    kind = sac_values.pop("duration", "fixed")
    max_duration = sac_values.pop("max_duration", None)
    search = {
        key: sac_values.pop(key)
        for key in ("shrink", "max_trials")
        if key in sac_values
    }
    if kind == "line_search":
        kwargs["duration_policy"] = LineSearchDuration(
            max_duration=max_duration, **search
        )
    else:
        if search:
            key = next(iter(search))
            raise ConfigError(
                "only used with duration = line_search",
                key=f"sac.{key}",
                line=line_of("sac", key),
            )
        kwargs["duration_policy"] = FixedDuration(max_duration)
    if "saturation" in sac_values:
        saturation = sac_values.pop("saturation")
        kwargs["saturation"] = _resolve_interval(saturation, length, False)
    if "application_time" in sac_values:
        kwargs["application_time"] = ApplicationTime(sac_values.pop("application_time"))
    sac = SacConfig(**kwargs, **sac_values)

    cfg = ScenarioConfig(
        plant=plant,
        control=control,
        sac=sac,
        lqr=LqrConfig(**values("lqr")),
        simulation=SimulationConfig(**values("simulation")),
        disturbance=DisturbanceConfig(**values("disturbance")),
        output=OutputConfig(**values("output")),
    )
    errors = cfg.validate()
    if errors:
        key, line = _blame(errors[0], line_of)
        raise ConfigError(errors[0], key=key, line=line)
    return cfg


def parse_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text())


def _num(value: float) -> str:
    return repr(float(value))


def _pair(value) -> str:
    return f"{_num(value[0])}, {_num(value[1])}"


def _bool(value: bool) -> str:
    return "true" if value else "false"


def _domain_pair(value) -> str:
    return _pair(value) if value else "0, L"


def emit_config(cfg: ScenarioConfig) -> str:
    """Config text that ``parse_config_text`` maps back to ``cfg``."""
    plant, control, sac = cfg.plant, cfg.control, cfg.sac
    lines = [
        "[plant]",
        f"length = {_num(plant.length)}",
        f"mu = {_num(plant.mu)}",
        f"beta = {_num(plant.beta)}",
        f"n_elements = {plant.n_elements}",
        f"initial = {plant.initial.kind}",
        f"amplitude = {_num(plant.initial.amplitude)}",
        f"mode = {plant.initial.mode}",
        "",
        "[control]",
        f"support = {_domain_pair(control.support)}",
        f"observation = {_domain_pair(control.observation)}",
        f"q_bar = {_num(control.q_bar)}",
        f"r_weight = {_num(control.r_weight)}",
        "",
        "[sac]",
        f"horizon = {_num(sac.horizon)}",
        f"sampling_time = {_num(sac.sampling_time)}",
    ]
    policy = sac.alpha_policy
    if isinstance(policy, FixedAlpha):
        lines.append(f"alpha = {_num(policy.alpha)}")
    else:
        lines.append(f"gamma = {_num(policy.gamma)}")
    duration = sac.duration_policy
    if isinstance(duration, LineSearchDuration):
        lines.append("duration = line_search")
        lines.append(f"shrink = {_num(duration.shrink)}")
        lines.append(f"max_trials = {duration.max_trials}")
        limit = duration.max_duration
    else:
        lines.append("duration = fixed")
        limit = duration.duration
    if limit is not None:
        lines.append(f"max_duration = {_num(limit)}")
    if sac.saturation is not None:
        lines.append(f"saturation = {_pair(sac.saturation)}")
    lines += [
        f"application_time = {ApplicationTime(sac.application_time).value}",
        f"calculation_time = {_num(sac.calculation_time)}",
        f"steps_per_sample = {sac.steps_per_sample}",
        f"terminal_weight = {_num(sac.terminal_weight)}",
        "",
        "[lqr]",
        f"tolerance = {_num(cfg.lqr.tolerance)}",
        f"max_iterations = {cfg.lqr.max_iterations}",
        "",
        "[simulation]",
        f"duration = {_num(cfg.simulation.duration)}",
        f"method = {cfg.simulation.method}",
        f"acceptable_error = {_num(cfg.simulation.acceptable_error)}",
        "",
        "[disturbance]",
        f"level = {_num(cfg.disturbance.level)}",
        f"seed = {cfg.disturbance.seed}",
    ]
    if cfg.disturbance.model_mu is not None:
        lines.append(f"model_mu = {_num(cfg.disturbance.model_mu)}")
    output = cfg.output
    lines += [
        "",
        "[output]",
        f"state_snapshots = {_bool(output.state_snapshots)}",
        f"error_series = {_bool(output.error_series)}",
        f"cost_series = {_bool(output.cost_series)}",
        f"control_snapshots = {_bool(output.control_snapshots)}",
        f"snapshot_stride = {output.snapshot_stride}",
        f"plot_script = {_bool(output.plot_script)}",
    ]
    return "\n".join(lines) + "\n"


def with_seed(cfg: ScenarioConfig, seed: Optional[int]) -> ScenarioConfig:
    """Override the disturbance seed (the CLI ``--seed`` flag)."""
    if seed is None:
        return cfg
    if seed < 0 or seed >= 2 ** 64:
        raise ConfigError(
            "seed must be an unsigned 64-bit integer", key="disturbance.seed"
        )
    return replace(cfg, disturbance=replace(cfg.disturbance, seed=seed))
