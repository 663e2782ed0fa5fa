"""Views for sac-pde runs - rich console reporting."""

from abc import ABC, abstractmethod
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterator, List, Optional

try:
    from rich.console import Console
    from rich.panel import Panel
    from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn
    from rich.table import Table
    from rich.text import Text

    RICH_AVAILABLE = True
except ImportError:
    RICH_AVAILABLE = False

try:
    from .experiments import ComparisonReport, GradientCheckResult
    from .experiments import StabilityAnalysis, SweepResult
    from .models import ClosedLoopResult, FixedAlpha, ScenarioConfig
except ImportError:
    from experiments import ComparisonReport, GradientCheckResult
    from experiments import StabilityAnalysis, SweepResult
    from models import ClosedLoopResult, FixedAlpha, ScenarioConfig


def _seconds(value: Optional[float]) -> str:
    return "never" if value is None else f"{value:.3f} s"


def _interval(value, length: float) -> str:
    if value is None:
        return f"(0, {length:g}) full domain"
    return f"({value[0]:g}, {value[1]:g})"


class BaseView(ABC):
    """Abstract base class for views."""

    @abstractmethod
    def show_header(self, command: str) -> None:
        """Display application header."""
        pass

    @abstractmethod
    def show_config_summary(self, cfg: ScenarioConfig) -> None:
        """Display the resolved scenario."""
        pass

    @abstractmethod
    def show_step(self, step: str, description: str) -> None:
        """Show current step being executed."""
        pass

    @abstractmethod
    def show_simulation(self, result: ClosedLoopResult, summary: dict) -> None:
        pass

    @abstractmethod
    def show_sweep(self, result: SweepResult) -> None:
        pass

    @abstractmethod
    def show_comparison(self, report: ComparisonReport) -> None:
        pass

    @abstractmethod
    def show_stability(self, analysis: StabilityAnalysis) -> None:
        pass

    @abstractmethod
    def show_gradient_check(self, check: GradientCheckResult) -> None:
        pass

    @abstractmethod
    def show_completion(self, output_dir: Path, files: List[Path], status: str) -> None:
        """Show written files and the final run status."""
        pass

    @abstractmethod
    def show_error(self, error: str) -> None:
        """Show error message."""
        pass

    @abstractmethod
    def progress(self, description: str, total: int) -> Iterator[Callable]:
        """Context yielding an ``advance(index, value)`` callback."""
        pass


class ConsoleView(BaseView):
    """Rich console view; ``quiet`` silences everything but errors."""

    def __init__(self, quiet: bool = False):
        if not RICH_AVAILABLE:
            raise ImportError(
                "Rich library is required. Install with: pip install rich"
            )
        self.quiet = quiet
        self.console = Console(quiet=quiet)
        self.error_console = Console(stderr=True)

    def show_header(self, command: str) -> None:
        header = Panel(
            Text("sac-pde", justify="center", style="bold blue"),
            subtitle=f"Sequential Action Control for evolution PDEs: {command}",
            border_style="blue",
        )
        self.console.print(header)

    def show_config_summary(self, cfg: ScenarioConfig) -> None:
        table = Table(title="Scenario", show_header=False)
        table.add_column("Option", style="cyan")
        table.add_column("Value", style="yellow")

        plant = cfg.plant
        table.add_row("Domain length", f"{plant.length:g}")
        table.add_row("mu (plant)", f"{plant.mu:.6g}")
        if cfg.model_mu != plant.mu:
            table.add_row("mu (model)", f"{cfg.model_mu:.6g}")
        table.add_row("beta", f"{plant.beta:g}")
        table.add_row("Elements", str(plant.n_elements))
        table.add_row("Control support", _interval(cfg.control.support, plant.length))
        table.add_row(
            "Observation window", _interval(cfg.control.observation, plant.length)
        )
        table.add_row("q_bar", f"{cfg.control.q_bar:g}")

        policy = cfg.sac.alpha_policy
        if isinstance(policy, FixedAlpha):
            table.add_row("alpha_d", f"{policy.alpha:g}")
        else:
            table.add_row("gamma", f"{policy.gamma:g}")
        table.add_row("Horizon T", f"{cfg.sac.horizon:g}")
        table.add_row("Sampling time", f"{cfg.sac.sampling_time:g}")
        table.add_row("Method", cfg.simulation.method)
        table.add_row("Duration", f"{cfg.simulation.duration:g}")
        if cfg.disturbance.level > 0:
            table.add_row(
                "Disturbance",
                f"{cfg.disturbance.level:.0%} (seed {cfg.disturbance.seed})",
            )
        self.console.print(table)

    def show_step(self, step: str, description: str) -> None:
        self.console.print(f"[bold blue]{step}[/bold blue] {description}")

    def show_simulation(self, result: ClosedLoopResult, summary: dict) -> None:
        table = Table(title=f"{result.method.upper()} closed loop")
        table.add_column("Metric", style="cyan")
        table.add_column("Value", justify="right", style="yellow")
        table.add_row("Initial L2 error", f"{result.errors[0]:.4e}")
        for key in ("error_t0.5", "error_t1", "error_t2", "error_final"):
            if key in summary:
                table.add_row(key.replace("_", " "), f"{summary[key]:.4e}")
        table.add_row("Plateau error", f"{summary['plateau_error']:.4e}")
        if summary.get("decay_rate") is not None:
            table.add_row("Decay rate on [0, 1]", f"{summary['decay_rate']:.4f}")
        table.add_row("Acceptable-error crossing", _seconds(summary["crossing_time"]))
        table.add_row("Mean compute / sample", f"{summary['mean_step_time']:.3e} s")
        if result.cost_decrease_flags is not None:
            misses = int(result.n_samples - result.cost_decrease_flags.sum())
            table.add_row("Samples without cost decrease", str(misses))
        self.console.print(table)

    def show_sweep(self, result: SweepResult) -> None:
        table = Table(title=f"Sweep over {result.parameter}")
        table.add_column("Value", style="cyan")
        table.add_column("Error t=0.5", justify="right")
        table.add_column("Error t=2", justify="right")
        table.add_column("Plateau", justify="right")
        table.add_column("Crossing", justify="right")
        for value, summary in zip(result.values, result.summaries):
            if summary is None:
                table.add_row(str(value), "-", "-", "-", "[red]not run[/red]")
                continue
            table.add_row(
                str(value),
                f"{summary.get('error_t0.5', float('nan')):.3e}",
                f"{summary.get('error_t2', float('nan')):.3e}",
                f"{summary['plateau_error']:.3e}",
                _seconds(summary["crossing_time"]),
            )
        self.console.print(table)
        for value, message in result.failures:
            self.show_error(f"{result.parameter}={value}: {message}")

    def show_comparison(self, report: ComparisonReport) -> None:
        table = Table(title="SAC vs LQR")
        table.add_column("", style="cyan")
        table.add_column("SAC", justify="right", style="green")
        table.add_column("LQR", justify="right", style="magenta")
        table.add_row(
            "Crossing time",
            _seconds(report.sac_crossing),
            _seconds(report.lqr_crossing),
        )
        table.add_row(
            "Offline compute",
            f"{report.sac.offline_time:.3e} s",
            f"{report.care_time:.3e} s",
        )
        table.add_row(
            "Mean compute / sample",
            f"{report.sac_step_time:.3e} s",
            f"{report.lqr_step_time:.3e} s",
        )
        table.add_row(
            "Final L2 error",
            f"{report.sac.errors[-1]:.3e}",
            f"{report.lqr.errors[-1]:.3e}",
        )
        self.console.print(table)
        self.console.print(
            f"CARE solve / SAC per-sample compute: [bold]{report.speedup:.1f}x[/bold]"
        )
        for name, ok in report.checks.items():
            mark = "[green]pass[/green]" if ok else "[red]FAIL[/red]"
            self.console.print(f"Check {name}: {mark}")

    def show_stability(self, analysis: StabilityAnalysis) -> None:
        report = analysis.report
        spectrum = report.spectrum
        table = Table(title=f"Unstable modes (margin C = {report.margin:.3g})")
        table.add_column("k", justify="right", style="cyan")
        table.add_column("delta_k", justify="right")
        table.add_column("alpha_d,k", justify="right")
        table.add_column("rate r_k", justify="right")
        for k in report.unstable_modes:
            rate = "-" if analysis.rates is None else f"{analysis.rates[k - 1]:.4g}"
            table.add_row(
                str(k),
                f"{spectrum.deltas[k - 1]:.4g}",
                f"{report.thresholds[k]:.4e}",
                rate,
            )
        self.console.print(table)
        if report.unstable_modes:
            self.console.print(f"alpha_bar = [bold]{report.alpha_bar:.4e}[/bold]")
            self.console.print(
                f"alpha_bar (exact margin) = {report.alpha_bar_margin:.4e}"
            )
            self.console.print(f"gamma_bar = {report.gamma_bar:.4g}")
        else:
            self.console.print(
                "[green]No unstable modes; every alpha_d < 0 works[/green]"
            )
        if analysis.alpha_d is not None:
            style = "green" if analysis.verdict else "red"
            verdict = "stable" if analysis.verdict else "not certified"
            self.console.print(
                f"alpha_d = {analysis.alpha_d:.4e}: [{style}]{verdict}[/{style}]"
            )
        if analysis.gamma is not None:
            style = "green" if analysis.gamma_ok else "red"
            verdict = "ok" if analysis.gamma_ok else "too weak"
            self.console.print(
                f"gamma = {analysis.gamma:g}: [{style}]{verdict}[/{style}]"
            )

    def show_gradient_check(self, check: GradientCheckResult) -> None:
        title = f"Mode insertion gradient (lambda = {check.needle_duration:g})"
        table = Table(title=title)
        table.add_column("tau", justify="right", style="cyan")
        table.add_column("Analytic", justify="right")
        table.add_column("Finite difference", justify="right")
        table.add_column("Relative error", justify="right", style="yellow")
        for row in check.rows:
            table.add_row(
                f"{row.tau:.4f}",
                f"{row.analytic:.8e}",
                f"{row.finite_difference:.8e}",
                f"{row.relative_error:.2e}",
            )
        self.console.print(table)

    def show_completion(self, output_dir: Path, files: List[Path], status: str) -> None:
        style = "green" if status == "complete" else "yellow"
        listing = "\n".join(f"[cyan]{Path(f).name}[/cyan]" for f in files)
        panel = Panel(
            f"[{style}]Run {status}[/{style}]\n\n"
            f"[cyan]Output directory:[/cyan] {output_dir}\n\n{listing}",
            title="Done",
            border_style=style,
        )
        self.console.print(panel)

    def show_error(self, error: str) -> None:
        self.error_console.print(f"[red]Error: {error}[/red]")

    @contextmanager
    def progress(self, description: str, total: int) -> Iterator[Callable]:
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TextColumn("{task.completed}/{task.total}"),
            console=self.console,
            disable=self.quiet,
        ) as progress:
            task = progress.add_task(description, total=total)

            def advance(index, value) -> None:
                progress.update(
                    task, advance=1, description=f"{description} ({value} done)"
                )

            yield advance
