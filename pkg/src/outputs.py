"""CSV series, run manifests and the generated plotting script."""

import csv
import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

try:
    from .config_file import emit_config
    from .galerkin import build_mesh
    from .models import ClosedLoopResult, ScenarioConfig
except ImportError:
    from config_file import emit_config
    from galerkin import build_mesh
    from models import ClosedLoopResult, ScenarioConfig

TOOL_VERSION = "0.1.0"
MANIFEST_NAME = "manifest.json"
MANIFEST_STATUSES = ("running", "complete", "partial", "failed")

ERROR_COLUMNS = ["t", "l2_error"]
COST_COLUMNS = [
    "t_start",
    "t_end",
    "stage_cost",
    "alpha_d",
    "tau",
    "duration",
    "gradient",
    "cost_decreased",
    "realized_mu",
]
FIELD_COLUMNS = {"states": ["t", "x", "y"], "controls": ["t", "x", "u"]}
TIMING_COLUMNS = ["t", "compute_time"]
SUMMARY_COLUMNS = [
    "value",
    "error_t0.5",
    "error_t1",
    "error_t2",
    "error_final",
    "plateau_error",
    "decay_rate",
    "crossing_time",
]
SUMMARY_BY_METHOD_COLUMNS = [
    "method",
    "offline_time",
    "mean_step_time",
    "crossing_time",
    "acceptable_error",
]


def fmt(value) -> str:
    """17 significant digits; empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (tuple, list)):
        return " ".join(fmt(item) for item in value)
    return f"{float(value):.17g}"


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(value) for value in row])
    return path


def _optional(series: Optional[np.ndarray], k: int):
    return None if series is None else series[k]


def error_rows(result: ClosedLoopResult):
    return zip(result.times, result.errors)


def cost_rows(result: ClosedLoopResult):
    for k in range(result.n_samples):
        yield (
            result.times[k],
            result.times[k + 1],
            result.costs[k],
            _optional(result.alpha_d, k),
            _optional(result.taus, k),
            _optional(result.durations, k),
            _optional(result.gradients, k),
            _optional(result.cost_decrease_flags, k),
            _optional(result.realized_mu, k),
        )


def state_rows(result: ClosedLoopResult, nodes: np.ndarray, stride: int = 1):
    """Long format (t, x, y) on all mesh nodes, boundary zeros included."""
    for k in range(0, result.n_samples + 1, stride):
        values = np.concatenate([[0.0], result.states[k], [0.0]])
        for x, y in zip(nodes, values):
            yield result.times[k], x, y


def control_rows(result: ClosedLoopResult, midpoints: np.ndarray, stride: int = 1):
    """Long format (t, x, u) at element midpoints; t is the start of each sample."""
    for k in range(0, result.n_samples, stride):
        for x, u in zip(midpoints, result.controls[k]):
            yield result.times[k], x, u


def write_simulation(
    output_dir, cfg: ScenarioConfig, result: ClosedLoopResult, prefix: str = ""
) -> List[Path]:
    """Write the series requested in ``cfg.output``; returns the files written."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    mesh = build_mesh(cfg.plant.length, cfg.plant.n_elements)
    out = cfg.output
    written = []
    if out.error_series:
        path = output_dir / f"{prefix}errors.csv"
        written.append(write_csv(path, ERROR_COLUMNS, error_rows(result)))
    if out.cost_series:
        path = output_dir / f"{prefix}costs.csv"
        written.append(write_csv(path, COST_COLUMNS, cost_rows(result)))
    if out.state_snapshots:
        written.append(
            write_csv(
                output_dir / f"{prefix}states.csv",
                FIELD_COLUMNS["states"],
                state_rows(result, mesh.nodes, out.snapshot_stride),
            )
        )
    if out.control_snapshots:
        written.append(
            write_csv(
                output_dir / f"{prefix}controls.csv",
                FIELD_COLUMNS["controls"],
                control_rows(result, mesh.element_midpoints, out.snapshot_stride),
            )
        )
    # wall-clock values, not reproducible between runs
    written.append(
        write_csv(
            output_dir / f"{prefix}timing.csv",
            TIMING_COLUMNS,
            zip(result.times[:-1], result.compute_times),
        )
    )
    return written


def _value_label(value) -> str:
    if isinstance(value, (tuple, list)):
        return "_".join(f"{float(item):g}" for item in value)
    return f"{float(value):g}"


def write_sweep(output_dir, cfg: ScenarioConfig, sweep_result) -> List[Path]:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for value, result in zip(sweep_result.values, sweep_result.results):
        if result is None:
            continue
        name = f"{sweep_result.parameter}_{_value_label(value)}_errors.csv"
        written.append(write_csv(output_dir / name, ERROR_COLUMNS, error_rows(result)))
    rows = []
    for value, summary in zip(sweep_result.values, sweep_result.summaries):
        if summary is None:
            continue
        rows.append([value] + [summary.get(column) for column in SUMMARY_COLUMNS[1:]])
    written.append(write_csv(output_dir / "sweep_summary.csv", SUMMARY_COLUMNS, rows))
    return written


def comparison_text(report) -> str:
    def when(value):
        return "never" if value is None else f"{value:.3f} s"

    def verdict(ok):
        return "pass" if ok else "FAIL"

    return "\n".join(
        [
            "SAC vs LQR",
            f"acceptable error: {report.acceptable_error:.3g} x initial L2 error",
            f"SAC crossing time: {when(report.sac_crossing)}",
            f"LQR crossing time: {when(report.lqr_crossing)}",
            f"CARE solve (offline): {report.care_time:.4g} s",
            f"SAC mean per-sample compute: {report.sac_step_time:.4g} s",
            f"LQR mean per-sample compute: {report.lqr_step_time:.4g} s",
            f"CARE / SAC per-sample ratio: {report.speedup:.3g}",
            f"check crossing_order (SAC <= LQR): {verdict(report.crossing_order_ok)}",
            f"check speed (CARE / SAC ratio): {verdict(report.speed_ok)}",
            "LQR feedback: u = -K y, K = R^-1 B^T M^-1 P",
            f"disturbance digest: {report.sac.disturbance_digest}",
            "",
        ]
    )


def write_comparison(output_dir, report) -> List[Path]:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    series = write_csv(
        output_dir / "comparison.csv",
        ["t", "sac_l2_error", "lqr_l2_error"],
        zip(report.sac.times, report.sac.errors, report.lqr.errors),
    )
    summary = write_csv(
        output_dir / "comparison_summary.csv",
        SUMMARY_BY_METHOD_COLUMNS,
        [
            [
                "sac",
                report.sac.offline_time,
                report.sac_step_time,
                report.sac_crossing,
                report.acceptable_error,
            ],
            [
                "lqr",
                report.care_time,
                report.lqr_step_time,
                report.lqr_crossing,
                report.acceptable_error,
            ],
        ],
    )
    text = output_dir / "comparison.txt"
    text.write_text(comparison_text(report))
    return [series, summary, text]


def stability_text(analysis) -> str:
    report = analysis.report
    spectrum = report.spectrum
    lines = [
        "Stability of the first-order SAC feedback",
        f"mu = {spectrum.mu:.6g}, beta = {report.beta:.6g}, "
        f"q_bar = {report.q_bar:.6g}, "
        f"T = {report.horizon:.6g}, modes retained = {spectrum.k_max}",
        f"margin C = {report.margin:.6g}",
        f"unstable modes: {len(report.unstable_modes)} {report.unstable_modes}",
    ]
    for k in report.unstable_modes:
        lines.append(
            f"  mode {k}: delta = {spectrum.deltas[k - 1]:.6g}, "
            f"alpha_d,k = {report.thresholds[k]:.6g} (r_k = C/2), "
            f"{report.margin_thresholds[k]:.6g} (r_k = C)"
        )
    if report.unstable_modes:
        lines.append(f"alpha_bar = {report.alpha_bar:.6g}")
        lines.append(f"alpha_bar (exact margin) = {report.alpha_bar_margin:.6g}")
        lines.append(f"gamma_bar (alpha_d = gamma J1) = {report.gamma_bar:.6g}")
    else:
        lines.append("alpha_bar = 0- (every alpha_d < 0 stabilizes)")
    if analysis.alpha_d is not None:
        verdict = "stable" if analysis.verdict else "unstable"
        lines.append(f"alpha_d = {analysis.alpha_d:.6g}: {verdict}")
    if analysis.gamma is not None:
        verdict = "ok" if analysis.gamma_ok else "too weak, the loop grows"
        lines.append(f"gamma = {analysis.gamma:.6g}: {verdict}")
    lines.append("")
    return "\n".join(lines)


def write_stability(output_dir, analysis) -> List[Path]:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    report = analysis.report
    spectrum = report.spectrum
    rates = analysis.rates
    rows = []
    for i, k in enumerate(spectrum.wavenumbers):
        rows.append(
            [
                int(k),
                spectrum.deltas[i],
                None if spectrum.chi is None else spectrum.chi[i],
                None if rates is None else rates[i],
                report.thresholds.get(int(k)),
                report.margin_thresholds.get(int(k)),
            ]
        )
    modes = write_csv(
        output_dir / "stability_modes.csv",
        ["k", "delta", "chi", "rate", "alpha_threshold", "alpha_threshold_margin"],
        rows,
    )
    text = output_dir / "stability.txt"
    text.write_text(stability_text(analysis))
    return [modes, text]


def write_gradient_check(output_dir, check) -> List[Path]:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    rows = [
        (r.tau, r.analytic, r.finite_difference, r.relative_error)
        for r in check.rows
    ]
    return [
        write_csv(
            output_dir / "gradient_check.csv",
            ["tau", "analytic", "finite_difference", "relative_error"],
            rows,
        )
    ]


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RunManifest:
    """``manifest.json``: resolved config, tool version, seed and output hashes.

    Written with status ``running`` when a command starts and rewritten by
    ``finalize`` once it ends.
    """

    def __init__(self, output_dir, command: str, cfg: ScenarioConfig):
        self.output_dir = Path(output_dir)
        self.command = command
        self.cfg = cfg
        self.files: List[Path] = []
        self.status = "running"
        self.error: Optional[str] = None
        self.started = datetime.now(timezone.utc).isoformat()

    @property
    def path(self) -> Path:
        return self.output_dir / MANIFEST_NAME

    def add(self, paths: Iterable[Path]) -> None:
        for path in paths:
            if path not in self.files:
                self.files.append(Path(path))

    def to_dict(self) -> dict:
        return {
            "tool": "sac-pde",
            "version": TOOL_VERSION,
            "command": self.command,
            "status": self.status,
            "started": self.started,
            "seed": self.cfg.disturbance.seed,
            "config": emit_config(self.cfg),
            "files": [
                {"name": path.name, "sha256": file_sha256(path)}
                for path in self.files
                if path.exists()
            ],
            "error": self.error,
        }

    def write(self) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return self.path

    def start(self) -> Path:
        self.status = "running"
        return self.write()

    def finalize(self, status: str, error: Optional[str] = None) -> Path:
        if status not in MANIFEST_STATUSES:
            raise ValueError(f"unknown manifest status {status!r}")
        self.status = status
        self.error = error
        return self.write()


PLOT_SCRIPT = '''"""Render the series written by sac-pde (requires matplotlib and numpy)."""

import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np

HERE = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent


def load(name):
    with open(HERE / name) as handle:
        rows = list(csv.reader(handle))
    header, data = rows[0], np.array(rows[1:], dtype=float)
    return {column: data[:, i] for i, column in enumerate(header)}


def surface(name, value, title):
    data = load(name)
    t, x = np.unique(data["t"]), np.unique(data["x"])
    z = data[value].reshape(t.size, x.size)
    fig = plt.figure()
    ax = fig.add_subplot(projection="3d")
    X, T = np.meshgrid(x, t)
    ax.plot_surface(X, T, z, cmap="viridis")
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    ax.set_title(title)
    fig.savefig(HERE / name.replace(".csv", ".png"), dpi=150)


def error_curves():
    fig, ax = plt.subplots()
    for path in sorted(HERE.glob("*errors.csv")):
        data = load(path.name)
        ax.semilogy(data["t"], data["l2_error"], label=path.stem)
    if (HERE / "comparison.csv").exists():
        data = load("comparison.csv")
        ax.semilogy(data["t"], data["sac_l2_error"], label="SAC")
        ax.semilogy(data["t"], data["lqr_l2_error"], label="LQR")
    ax.set_xlabel("t")
    ax.set_ylabel("L2 error")
    ax.legend()
    fig.savefig(HERE / "errors.png", dpi=150)


if __name__ == "__main__":
    if (HERE / "states.csv").exists():
        surface("states.csv", "y", "state")
    if (HERE / "controls.csv").exists():
        surface("controls.csv", "u", "control")
    error_curves()
'''


def write_plot_script(output_dir) -> Path:
    path = Path(output_dir) / "plot_results.py"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(PLOT_SCRIPT)
    return path
