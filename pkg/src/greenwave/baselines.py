"""Comparison controllers.

Higher level: a connected cruise controller that tracks the signal-timing
target velocity and a headway term, with an explicit stop envelope that
brings the vehicle to rest at red lights (this baseline stops at signals by
design). Lower level: a receding-horizon energy manager that searches the
throttle grid over a short horizon against a demand forecast taken from the
transition model.
"""

from dataclasses import dataclass
import math

import numpy as np

from .dynamics import VehicleParams, passive_accel
from .markov import TransitionModel
from .powertrain import battery_step, engine_output, split_power
from .qlearn import KG_TO_G, MdpSpec, Powertrain
from .spat import RED, Corridor, InfeasibleWindowError, light_phase, target_velocity


@dataclass(frozen=True)
class CruiseConfig:
    """Gains of the cruise law plus the stop-envelope geometry."""

    k_v: float = 0.4          # 1/s, velocity-error gain
    k_g: float = 0.1          # 1/s^2, gap-error gain
    headway: float = 1.5      # s, desired time headway
    stop_margin: float = 2.0  # m, stand-off from the stop line
    # Fraction of |u_min| at which the brake envelope engages.
    brake_fraction: float = 0.5

    def __post_init__(self):
        if self.k_v <= 0 or self.k_g <= 0 or self.headway <= 0:
            raise ValueError("gains and headway must be positive")


def cruise_control_accel(
    state,
    lead,
    t: float,
    corridor: Corridor,
    cfg: CruiseConfig,
    params: VehicleParams,
    dt: float,
) -> float:
    """Acceleration command of the cruise baseline.

    ``lead`` is None or the lead vehicle's current (position, velocity). The
    base law tracks the signal-timing target velocity plus a headway term;
    a speed-limit governor caps it at v_max, and stop envelopes override it
    when the next light is currently red (or the lead vehicle is slow) and
    the braking-distance arithmetic demands action. Committed approaches
    (required deceleration beyond u_min) proceed through.
    """
    v = state.velocity
    light = corridor.next_light(state.position)
    if light is None:
        v_tar = corridor.v_max
    else:
        try:
            v_tar = target_velocity(t, light - state.position, corridor)
        except InfeasibleWindowError:
            v_tar = corridor.v_min

    u = cfg.k_v * (v_tar - v)
    if lead is not None:
        gap = lead[0] - state.position
        u += cfg.k_g * (gap - cfg.headway * v)

    p_hat = passive_accel(params, v)
    # Speed-limit governor: never command past v_max.
    u = min(u, (corridor.v_max - v) / dt - p_hat)

    brake_on = cfg.brake_fraction * (-params.u_min)
    if light is not None and light_phase(t, corridor.timing) == RED:
        d = light - state.position
        if d <= cfg.stop_margin:
            u = min(u, -v / dt - p_hat)  # hold at the stop line
        else:
            a_req = v * v / (2.0 * (d - cfg.stop_margin))
            if brake_on <= a_req <= -params.u_min:
                u = min(u, -a_req - p_hat)
            # a_req beyond u_min: too late to stop, committed through.

    if lead is not None:
        gap = lead[0] - state.position
        closing = v - lead[1]
        if gap <= cfg.stop_margin:
            u = min(u, -v / dt - p_hat)
        elif closing > 0.0:
            a_req = closing * closing / (2.0 * (gap - cfg.stop_margin))
            if a_req >= brake_on:
                u = min(u, -a_req - p_hat)

    return min(max(u, params.u_min), params.u_max)


@dataclass(frozen=True)
class EnergyMpcConfig:
    """Receding-horizon energy baseline settings."""

    horizon: int = 5                 # steps
    forecast: str = "expectation"    # "expectation" | "frozen"
    soc_lattice: int = 201           # SOC grid for the cost-to-go recursion

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.forecast not in ("expectation", "frozen"):
            raise ValueError("forecast must be 'expectation' or 'frozen'")


def _stage_costs_over_lattice(soc_lattice, p_demand, v, spec: MdpSpec,
                              pt: Powertrain, th_grid):
    """Stage cost and next-SOC arrays for every (action, lattice point)."""
    n_lat = len(soc_lattice)
    costs = np.empty((len(th_grid), n_lat))
    soc_next = np.empty((len(th_grid), n_lat))
    battery = pt.battery
    v_oc = battery.v_oc(soc_lattice)
    r_in = battery.r_in(soc_lattice)
    for a, th in enumerate(th_grid):
        _, _, p_en, fuel = engine_output(float(th), v, pt.engine)
        p_b, p_clamped = split_power(p_demand, p_en, pt.eff, battery)
        disc = v_oc * v_oc - 4.0 * r_in * p_b
        i_b = (v_oc - np.sqrt(np.maximum(disc, 0.0))) / (2.0 * r_in)
        nxt = soc_lattice - i_b * spec.dt / battery.capacity
        clamped = (nxt > battery.soc_max) | (nxt < battery.soc_min)
        nxt = np.clip(nxt, battery.soc_min, battery.soc_max)
        violated = (
            p_clamped
            | clamped
            | (i_b > battery.i_max)
            | (i_b < battery.i_min)
            | (disc < 0.0)
        )
        costs[a] = (fuel * KG_TO_G
                    + spec.soc_weight * (soc_lattice - spec.soc_ref) ** 2) * spec.dt
        costs[a] += np.where(violated, spec.penalty, 0.0)
        soc_next[a] = nxt
    return costs, soc_next


def demand_forecast(p_dem: float, v: float, tpm: TransitionModel, horizon: int,
                    mode: str = "expectation") -> np.ndarray:
    """Forecast demand over the horizon; step 0 is the actual current demand."""
    out = np.empty(horizon)
    out[0] = p_dem
    if horizon == 1:
        return out
    if mode == "frozen":
        out[1:] = p_dem
        return out
    q = tpm.quantizer
    k = q.speed_index(v)
    centers = q.power_centers()
    dist = np.zeros(q.power_bins)
    dist[q.power_index(p_dem)] = 1.0
    for j in range(1, horizon):
        dist = dist @ tpm.probs[k]
        out[j] = float(dist @ centers)
    return out


def mpc_energy_baseline(
    soc: float,
    p_dem: float,
    v: float,
    spec: MdpSpec,
    cfg: EnergyMpcConfig,
    powertrain: Powertrain,
    tpm: TransitionModel | None = None,
) -> float:
    """Receding-horizon throttle from an exhaustive grid search.

    Stage costs follow the same fuel + SOC-anchoring objective the learner
    minimizes. Future stages run a backward recursion on an SOC lattice
    (linear interpolation of the cost-to-go); stage 0 is evaluated exactly
    from the actual SOC, so horizon 1 reduces to the myopic grid argmin.
    """
    th_grid = spec.throttle_grid()
    if cfg.horizon > 1:
        if tpm is None:
            raise ValueError("horizon > 1 needs a transition model for the forecast")
        forecast = demand_forecast(p_dem, v, tpm, cfg.horizon, cfg.forecast)
    else:
        forecast = np.array([p_dem])

    battery = powertrain.battery
    cost_to_go = None
    lattice = np.linspace(battery.soc_min, battery.soc_max, cfg.soc_lattice)
    for j in range(cfg.horizon - 1, 0, -1):
        costs, nxt = _stage_costs_over_lattice(
            lattice, float(forecast[j]), v, spec, powertrain, th_grid)
        if cost_to_go is not None:
            costs = costs + np.interp(nxt, lattice, cost_to_go)
        cost_to_go = costs.min(axis=0)

    best_a = 0
    best = math.inf
    for a, th in enumerate(th_grid):
        _, _, p_en, fuel = engine_output(float(th), v, powertrain.engine)
        p_b, p_clamped = split_power(p_dem, p_en, powertrain.eff, battery)
        soc_next, i_b, soc_clamped = battery_step(soc, p_b, battery, spec.dt)
        violated = p_clamped or soc_clamped or not (
            battery.i_min <= i_b <= battery.i_max)
        c = (fuel * KG_TO_G + spec.soc_weight * (soc - spec.soc_ref) ** 2) * spec.dt
        if violated:
            c += spec.penalty
        if cost_to_go is not None:
            c += float(np.interp(soc_next, lattice, cost_to_go))
        if c < best:
            best = c
            best_a = a
    return float(th_grid[best_a])
