"""Controller for sac-pde - runs experiments and coordinates outputs and view."""

from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional, Sequence

try:
    from . import experiments, outputs
    from .config_file import parse_config, parse_number, parse_pair, with_seed
    from .logging_config import logger
    from .models import ConfigError, ScenarioConfig
    from .views import BaseView
except ImportError:
    import experiments
    import outputs
    from config_file import parse_config, parse_number, parse_pair, with_seed
    from logging_config import logger
    from models import ConfigError, ScenarioConfig
    from views import BaseView


def parse_sweep_values(parameter: str, texts: Sequence[str]) -> list:
    """Sweep values from the command line; windows are written ``a,b``."""
    if parameter not in experiments.SWEEP_PARAMETERS:
        raise ConfigError(
            f"cannot sweep {parameter!r}; choose one of "
            f"{', '.join(experiments.SWEEP_PARAMETERS)}",
            key="sweep.parameter",
        )
    if not texts:
        raise ConfigError("sweep needs at least one value", key="sweep.values")
    values = []
    for text in texts:
        try:
            if parameter == "obs_window":
                a, b = parse_pair(text)
                if isinstance(a, str) or isinstance(b, str):
                    raise ValueError("use numeric window bounds")
                values.append((a, b))
            else:
                values.append(parse_number(text))
        except ValueError as exc:
            raise ConfigError(f"bad value {text!r}: {exc}", key="sweep.values") from exc
    return values


class ExperimentController:
    """Loads the scenario, runs one command and records its manifest."""

    def __init__(self, view: BaseView):
        self.view = view
        self.config: ScenarioConfig = ScenarioConfig()

    def load_config(
        self, path: Optional[str] = None, seed: Optional[int] = None
    ) -> ScenarioConfig:
        """Parse ``path`` (reference scenario when omitted) and apply ``--seed``."""
        cfg = parse_config(path) if path else ScenarioConfig().check()
        self.config = with_seed(cfg, seed)
        return self.config

    @contextmanager
    def _manifest(
        self, output_dir: Path, command: str
    ) -> Iterator[outputs.RunManifest]:
        """Manifest written as ``running`` up front and finalized on exit."""
        manifest = outputs.RunManifest(output_dir, command, self.config)
        manifest.start()
        try:
            yield manifest
        except BaseException as exc:
            manifest.finalize("failed", error=str(exc) or type(exc).__name__)
            raise
        if manifest.status == "running":
            manifest.finalize("complete")

    def _finish(self, manifest: outputs.RunManifest, status: str = "complete") -> str:
        if self.config.output.plot_script:
            manifest.add([outputs.write_plot_script(manifest.output_dir)])
        manifest.finalize(status)
        self.view.show_completion(manifest.output_dir, manifest.files, status)
        return status

    def cmd_simulate(self, output_dir) -> str:
        output_dir = Path(output_dir)
        cfg = self.config
        self.view.show_config_summary(cfg)
        with self._manifest(output_dir, "simulate") as manifest:
            self.view.show_step("Simulate", f"{cfg.simulation.method} closed loop")
            result = experiments.run_scenario(cfg)
            summary = experiments.summarize(result, cfg.simulation.acceptable_error)
            manifest.add(outputs.write_simulation(output_dir, cfg, result))
            self.view.show_simulation(result, summary)
            return self._finish(manifest)

    def cmd_sweep(self, output_dir, parameter: str, values: Sequence[str]) -> str:
        output_dir = Path(output_dir)
        parsed = parse_sweep_values(parameter, values)
        self.view.show_config_summary(self.config)
        with self._manifest(output_dir, f"sweep {parameter}") as manifest:
            self.view.show_step("Sweep", f"{parameter} over {len(parsed)} value(s)")
            with self.view.progress(f"Sweeping {parameter}", len(parsed)) as advance:
                result = experiments.sweep(
                    self.config, parameter, parsed, progress=advance
                )
            manifest.add(outputs.write_sweep(output_dir, self.config, result))
            self.view.show_sweep(result)
            if result.partial:
                logger.warning("sweep incomplete: %d failure(s)", len(result.failures))
            return self._finish(manifest, "partial" if result.partial else "complete")

    def cmd_compare(self, output_dir) -> str:
        output_dir = Path(output_dir)
        self.view.show_config_summary(self.config)
        with self._manifest(output_dir, "compare") as manifest:
            self.view.show_step("Compare", "SAC and LQR on one disturbance sequence")
            report = experiments.compare_sac_lqr(self.config)
            manifest.add(outputs.write_comparison(output_dir, report))
            manifest.add(
                outputs.write_simulation(output_dir, self.config, report.sac, "sac_")
            )
            manifest.add(
                outputs.write_simulation(output_dir, self.config, report.lqr, "lqr_")
            )
            self.view.show_comparison(report)
            return self._finish(manifest)

    def cmd_analyze(self, output_dir) -> str:
        output_dir = Path(output_dir)
        with self._manifest(output_dir, "analyze") as manifest:
            self.view.show_step("Analyze", "modal stability of the SAC feedback")
            analysis = experiments.analyze_stability(self.config)
            manifest.add(outputs.write_stability(output_dir, analysis))
            self.view.show_stability(analysis)
            manifest.finalize("complete")
            self.view.show_completion(output_dir, manifest.files, "complete")
            return "complete"

    def cmd_gradient_check(
        self, output_dir, taus: Optional[List[float]] = None
    ) -> str:
        output_dir = Path(output_dir)
        with self._manifest(output_dir, "gradient-check") as manifest:
            self.view.show_step("Gradient check", "adjoint vs needle variations")
            check = experiments.gradient_check(self.config, taus)
            manifest.add(outputs.write_gradient_check(output_dir, check))
            self.view.show_gradient_check(check)
            manifest.finalize("complete")
            self.view.show_completion(output_dir, manifest.files, "complete")
            return "complete"

    def run(self, command: str, output_dir, **options) -> str:
        """Dispatch ``command`` after showing the header."""
        self.view.show_header(command)
        handlers = {
            "simulate": self.cmd_simulate,
            "sweep": self.cmd_sweep,
            "compare": self.cmd_compare,
            "analyze": self.cmd_analyze,
            "gradient-check": self.cmd_gradient_check,
        }
        if command not in handlers:
            raise ConfigError(f"unknown command {command!r}")
        try:
            return handlers[command](output_dir, **options)
        except KeyboardInterrupt:
            raise
        except Exception as exc:
            self.view.show_error(str(exc))
            raise
