"""Run artifacts: trace CSV, metrics JSON and the standard figure set."""

from dataclasses import asdict
import json
import os

from .plots import FIGURE_KINDS, save_figure
from .scenario import Scenario, scenario_to_dict
from .simulate import Metrics
from .trace import SimTrace, write_trace_csv

FIGURE_FILES = {
    "distance": "distance_time.svg",
    "velocity": "velocity.svg",
    "soc": "soc.svg",
    "power": "power_split.svg",
    "engine": "engine_points.svg",
}


def metrics_to_dict(metrics: Metrics) -> dict:
    return {
        "scenario": metrics.scenario_name,
        "seed": metrics.seed,
        "controller": metrics.controller,
        "vehicles": [asdict(m) for m in metrics.vehicles],
        "fleet": metrics.fleet,
        # Timing is wall-clock and the one legitimately non-reproducible part.
        "timing": metrics.timing,
    }


def write_metrics_json(metrics: Metrics, path) -> None:
    with open(path, "w") as fh:
        json.dump(metrics_to_dict(metrics), fh, indent=2, sort_keys=True)
        fh.write("\n")


def export(trace: SimTrace, metrics: Metrics | None, scn: Scenario, outdir,
           figures: bool = True) -> dict:
    """Write trace.csv, metrics.json, scenario.json and the figure files.

    Returns a dict naming every file written. I/O errors propagate with the
    offending path in the exception.
    """
    os.makedirs(outdir, exist_ok=True)
    written = {}

    path = os.path.join(outdir, "trace.csv")
    write_trace_csv(trace, path)
    written["trace"] = path

    if metrics is not None:
        path = os.path.join(outdir, "metrics.json")
        write_metrics_json(metrics, path)
        written["metrics"] = path

    path = os.path.join(outdir, "scenario.json")
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(scn), fh, indent=2, sort_keys=True)
        fh.write("\n")
    written["scenario"] = path

    if figures:
        for kind, fname in FIGURE_FILES.items():
            fig = FIGURE_KINDS[kind](trace, scn)
            path = os.path.join(outdir, fname)
            save_figure(fig, path)
            written[kind] = path
    return written


def write_comparison_csv(comparison: dict, path) -> None:
    """Comparison report as a flat CSV table (one row per vehicle + fleet)."""
    with open(path, "w") as fh:
        fh.write("row,travel_time_saving_pct,fuel_saving_pct\n")
        for rec in comparison["per_vehicle"]:
            fh.write(
                f"vehicle_{rec['vehicle']},"
                f"{rec['travel_time_saving_pct']!r},"
                f"{rec['fuel_saving_pct']!r}\n"
            )
        fleet = comparison["fleet"]
        fh.write(
            f"fleet_mean,{fleet['travel_time_saving_pct']!r},"
            f"{fleet['fuel_saving_pct']!r}\n"
        )


def format_comparison(comparison: dict) -> str:
    lines = [
        f"arm A: {comparison['arm_a']}   arm B: {comparison['arm_b']}",
        f"{'row':<12}{'time saving %':>16}{'fuel saving %':>16}",
    ]
    for rec in comparison["per_vehicle"]:
        lines.append(
            f"vehicle {rec['vehicle']:<4}"
            f"{rec['travel_time_saving_pct']:>16.2f}"
            f"{rec['fuel_saving_pct']:>16.2f}"
        )
    fleet = comparison["fleet"]
    lines.append(
        f"{'fleet mean':<12}{fleet['travel_time_saving_pct']:>16.2f}"
        f"{fleet['fuel_saving_pct']:>16.2f}"
    )
    return "\n".join(lines)
