"""Figure builders for simulation traces.

All figures render through the Agg backend and are meant to be saved to
files (SVG by default from the CLI). Red/green bar rectangles in the
distance-time figure carry ``gid`` attributes encoding light position and
interval start, so emitted SVGs can be checked geometrically.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .scenario import Scenario
from .trace import SimTrace

plt.rcParams["svg.hashsalt"] = "greenwave"

_BAR_HALF_HEIGHT = 12.0  # m, visual thickness of the light bars


def _time_span(trace: SimTrace) -> float:
    spans = [trace.column(v, "t")[-1] for v in range(trace.n_vehicles)
             if trace.n_steps(v)]
    return max(spans) + 1.0 if spans else 1.0


def fig_distance_time(trace: SimTrace, scn: Scenario):
    """Distance-time trajectories with red/green bars at every light."""
    fig, ax = plt.subplots(figsize=(9, 6))
    t_max = _time_span(trace)
    timing = scn.corridor.timing
    cycles = int(np.ceil(t_max / timing.cycle))
    for pos in scn.corridor.light_positions:
        for c in range(cycles):
            start = c * timing.cycle
            red = ax.add_patch(plt.Rectangle(
                (start, pos - _BAR_HALF_HEIGHT), timing.red,
                2 * _BAR_HALF_HEIGHT, facecolor="red", edgecolor="none",
                alpha=0.6, zorder=1))
            red.set_gid(f"light-red-{pos:g}-{start:g}")
            green = ax.add_patch(plt.Rectangle(
                (start + timing.red, pos - _BAR_HALF_HEIGHT), timing.green,
                2 * _BAR_HALF_HEIGHT, facecolor="limegreen",
                edgecolor="none", alpha=0.6, zorder=1))
            green.set_gid(f"light-green-{pos:g}-{start + timing.red:g}")
    for vid in range(trace.n_vehicles):
        ax.plot(trace.column(vid, "t"), trace.column(vid, "s"),
                lw=1.0, zorder=2, label=f"vehicle {vid}")
    ax.set_xlim(0.0, t_max)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("distance (m)")
    ax.set_title("Vehicle distance trajectories")
    if trace.n_vehicles <= 8:
        ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    return fig


def fig_velocity(trace: SimTrace, scn: Scenario, vehicles=None):
    """Velocity profiles of the selected vehicles (all by default)."""
    vehicles = list(range(trace.n_vehicles)) if vehicles is None else vehicles
    fig, ax = plt.subplots(figsize=(9, 4.5))
    for vid in vehicles:
        ax.plot(trace.column(vid, "t"), trace.column(vid, "v"),
                lw=1.0, label=f"vehicle {vid}")
    ax.axhline(scn.corridor.v_max, color="grey", ls="--", lw=0.8)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("velocity (m/s)")
    ax.set_title("Velocity profiles")
    if len(vehicles) <= 8:
        ax.legend(fontsize=7)
    fig.tight_layout()
    return fig


def fig_soc(trace: SimTrace, scn: Scenario, vehicles=None):
    """Battery state-of-charge trajectories."""
    vehicles = list(range(trace.n_vehicles)) if vehicles is None else vehicles
    fig, ax = plt.subplots(figsize=(9, 4.5))
    for vid in vehicles:
        ax.plot(trace.column(vid, "t"), trace.column(vid, "soc"),
                lw=1.0, label=f"vehicle {vid}")
    ax.axhline(scn.battery.soc_min, color="grey", ls="--", lw=0.8)
    ax.axhline(scn.battery.soc_max, color="grey", ls="--", lw=0.8)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("SOC (-)")
    ax.set_ylim(scn.battery.soc_min - 0.05, scn.battery.soc_max + 0.05)
    ax.set_title("State of charge")
    if len(vehicles) <= 8:
        ax.legend(fontsize=7)
    fig.tight_layout()
    return fig


def fig_power_split(trace: SimTrace, scn: Scenario, vehicles=None):
    """Demand, engine and battery power for up to two vehicles."""
    if vehicles is None:
        vehicles = list(range(min(2, trace.n_vehicles)))
    fig, axes = plt.subplots(len(vehicles), 1, sharex=True,
                             figsize=(9, 3.2 * max(1, len(vehicles))))
    if len(vehicles) == 1:
        axes = [axes]
    for ax, vid in zip(axes, vehicles):
        t = trace.column(vid, "t")
        ax.plot(t, np.array(trace.column(vid, "p_dem")) / 1e3, lw=0.9,
                label="demand")
        ax.plot(t, np.array(trace.column(vid, "p_en")) / 1e3, lw=0.9,
                label="engine")
        ax.plot(t, np.array(trace.column(vid, "p_b")) / 1e3, lw=0.9,
                label="battery")
        ax.set_ylabel(f"vehicle {vid}\npower (kW)")
        ax.legend(fontsize=7)
    axes[-1].set_xlabel("time (s)")
    axes[0].set_title("Power split")
    fig.tight_layout()
    return fig


def fig_engine_points(trace: SimTrace, scn: Scenario, vehicles=None):
    """Engine operating points over the efficiency map contours."""
    vehicles = list(range(trace.n_vehicles)) if vehicles is None else vehicles
    engine = scn.engine
    fig, ax = plt.subplots(figsize=(8, 5.5))
    tt, nn = np.meshgrid(engine.torque_grid, engine.speed_grid, indexing="ij")
    cs = ax.contourf(nn, tt, engine.eta_grid, levels=12, cmap="viridis")
    fig.colorbar(cs, ax=ax, label="efficiency (-)")
    for vid in vehicles:
        p_en = np.array(trace.column(vid, "p_en"))
        v = np.array(trace.column(vid, "v"))
        th = np.array(trace.column(vid, "throttle"))
        on = (th > 0.0) & (p_en > 0.0)
        if not on.any():
            continue
        speeds = np.array([engine.shaft_speed(x) for x in v[on]])
        torques = p_en[on] / speeds
        ax.scatter(speeds, torques, s=6, alpha=0.5, label=f"vehicle {vid}")
    ax.plot(engine.speed_grid,
            [engine.max_torque(x) for x in engine.speed_grid],
            color="k", lw=1.2)
    ax.set_xlabel("engine speed (rad/s)")
    ax.set_ylabel("engine torque (Nm)")
    ax.set_title("Engine operating points")
    if vehicles and len(vehicles) <= 8:
        ax.legend(fontsize=7, loc="upper right")
    fig.tight_layout()
    return fig


FIGURE_KINDS = {
    "distance": fig_distance_time,
    "velocity": fig_velocity,
    "soc": fig_soc,
    "power": fig_power_split,
    "engine": fig_engine_points,
}


def save_figure(fig, path) -> None:
    fig.savefig(path, metadata={"Date": None} if str(path).endswith(".svg") else None)
    plt.close(fig)
