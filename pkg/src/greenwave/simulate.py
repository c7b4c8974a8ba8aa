"""Closed-loop multi-vehicle simulation, the three-phase training protocol,
metrics, and trace audits.

Tick pipeline (fixed order): signal windows -> higher-level control ->
dynamics step -> power demand from the realized (v, a) -> lower-level
throttle -> powertrain/battery step. The demand and the engine both use the
step-origin velocity, which is also the speed bin the transition model
conditions on.

All randomness comes from seed sequences derived from the scenario seed;
wall-clock time is measured but never feeds back into the simulation, so a
(scenario, seed) pair reproduces its trace byte-for-byte.
"""

from dataclasses import dataclass, field
import math
import time

import numpy as np

from .baselines import cruise_control_accel, mpc_energy_baseline
from .dynamics import VehicleState, passive_accel, step_dynamics
from .markov import TransitionModel, estimate_tpm
from .mpc import plan_step, shift_warm_start
from .powertrain import battery_step, engine_output, power_demand, split_power
from .qlearn import (
    KG_TO_G,
    LearningSchedule,
    QTable,
    TrainResult,
    act,
    train,
)
from .scenario import Scenario
from .spat import light_phase
from .trace import SimTrace


@dataclass
class VehicleMetrics:
    vehicle: int
    travel_time: float
    raw_fuel_g: float
    corrected_fuel_g: float
    soc_initial: float
    soc_final: float
    stops: int
    min_velocity: float
    window_violations: int
    stop_required_steps: int
    cold_states: int
    timeout: bool


@dataclass
class Metrics:
    vehicles: list
    fleet: dict
    timing: dict
    scenario_name: str
    seed: int
    controller: str


@dataclass
class FleetTraining:
    """Artifacts of the training protocol: demand models and policies."""

    tpms: dict
    qtables: dict
    results: dict
    profile_trace: SimTrace
    wall_clock_s: float = 0.0


def neutral_throttle(p_dem: float, v: float, scn: Scenario) -> float:
    """Charge-neutral placeholder: the engine alone covers the demand."""
    if p_dem <= 0.0 or v <= 0.0:
        return 0.0
    engine = scn.engine
    n = engine.shaft_speed(v)
    p_target = p_dem / scn.efficiencies.transmission
    th = p_target / (engine.max_torque(n) * n)
    return min(max(th, 0.0), 1.0)


def soc_corrected_fuel(raw_fuel_g: float, delta_soc: float, scn: Scenario) -> float:
    """Fuel figure corrected for the net SOC change over the trip.

    The SOC deviation converts to fuel through the engine-to-battery
    charging path at its mean efficiency (peak engine efficiency times the
    motor efficiency); surplus charge credits fuel, deficit debits it.
    """
    battery = scn.battery
    eta_path = scn.engine.eta_peak * scn.efficiencies.motor
    energy = delta_soc * battery.capacity * battery.v_nominal  # J
    return raw_fuel_g - energy / (scn.engine.lhv * eta_path) * KG_TO_G


def run_scenario(scn: Scenario, training: FleetTraining | None = None,
                 controller: str | None = None):
    """Simulate the fleet under the scenario's controllers.

    ``controller`` ("higher+lower", e.g. "mpc+rl") overrides the scenario
    selection. For the rl lower level, trained Q tables must be supplied via
    ``training`` (or are trained first, see ``prepare_training``). Returns
    (SimTrace, Metrics).
    """
    if controller is not None:
        higher, lower = parse_controller(controller)
    else:
        higher, lower = scn.higher, scn.lower
    if lower == "rl" and (training is None or not training.qtables):
        training = prepare_training(scn, higher=higher)
    if lower == "mpcbase" and training is None:
        training = prepare_training(scn, higher=higher, need_q=False)
    return _simulate(scn, higher, lower, training)


def parse_controller(name: str):
    try:
        higher, lower = name.split("+")
    except ValueError:
        raise ValueError(f"controller must look like 'mpc+rl', got {name!r}")
    if higher not in ("mpc", "cruise") or lower not in ("rl", "mpcbase", "neutral"):
        raise ValueError(f"unknown controller combination {name!r}")
    return higher, lower


def _simulate(scn: Scenario, higher: str, lower: str,
              training: FleetTraining | None):
    dt = scn.dt
    corridor = scn.corridor
    params = scn.vehicle
    pt = scn.powertrain
    n = scn.n_vehicles
    states = scn.initial_fleet()
    start_pos = [st.position for st in states]
    socs = [scn.soc_init] * n
    fuel_kg = [0.0] * n
    warm = {}

    trace = SimTrace(n_vehicles=n)
    crossed = [False] * n
    travel_time = [math.nan] * n
    fuel_at_goal = [math.nan] * n
    soc_at_goal = [math.nan] * n
    min_velocity = [math.inf] * n
    stops = [0] * n
    below = [False] * n
    window_violations = [0] * n
    stop_required_steps = [0] * n
    cold_states = [0] * n

    max_steps = int(round(scn.time_cap / dt))
    wall_start = time.perf_counter()
    higher_wall = 0.0
    lower_wall = 0.0

    for k in range(max_steps):
        if all(crossed):
            break
        t = k * dt

        # Higher level: per-vehicle force commands.
        t_h0 = time.perf_counter()
        diag = {
            i: {"iterations": 0, "residual": 0.0, "status": "-",
                "window_violation": 0, "stop_required": 0}
            for i in range(n)
        }
        controls = [0.0] * n
        if higher == "mpc":
            plans = plan_step(states, t, corridor, scn.mpc, params,
                              scn.efficiencies, warm_starts=warm)
            for i, plan in plans.items():
                controls[i] = float(plan.controls[0])
                warm[i] = shift_warm_start(plan)
                diag[i] = {
                    "iterations": plan.iterations,
                    "residual": plan.residual,
                    "status": plan.status,
                    "window_violation": int(plan.window_violation),
                    "stop_required": int(plan.stop_required),
                }
        else:
            order = sorted(range(n), key=lambda i: states[i].position,
                           reverse=True)
            for rank, i in enumerate(order):
                if rank == 0:
                    lead = None
                else:
                    j = order[rank - 1]
                    lead = (states[j].position, states[j].velocity)
                controls[i] = cruise_control_accel(
                    states[i], lead, t, corridor, scn.cruise, params, dt)
        higher_wall += time.perf_counter() - t_h0

        # Dynamics step and realized power demand.
        new_states = [step_dynamics(states[i], params, controls[i], dt)
                      for i in range(n)]
        accels = [(new_states[i].velocity - states[i].velocity) / dt
                  for i in range(n)]
        demands = [power_demand(states[i].velocity, accels[i], params)
                   for i in range(n)]

        # Lower level: throttle selection.
        t_l0 = time.perf_counter()
        throttles = [0.0] * n
        cold_flags = [0] * n
        for i in range(n):
            v_i = states[i].velocity
            if lower == "rl":
                th, cold = act(training.qtables[i], socs[i], demands[i], v_i,
                               scn.mdp)
                throttles[i] = th
                cold_flags[i] = int(cold)
            elif lower == "mpcbase":
                throttles[i] = mpc_energy_baseline(
                    socs[i], demands[i], v_i, scn.mdp, scn.energy_mpc, pt,
                    tpm=training.tpms[i])
            else:
                throttles[i] = neutral_throttle(demands[i], v_i, scn)
        lower_wall += time.perf_counter() - t_l0

        # Powertrain and battery step; record the tick.
        for i in range(n):
            v_i = states[i].velocity
            _, _, p_en, mdot = engine_output(throttles[i], v_i, scn.engine)
            p_b, pb_clamped = split_power(demands[i], p_en, scn.efficiencies,
                                          scn.battery)
            soc_next, i_b, soc_clamped = battery_step(socs[i], p_b,
                                                      scn.battery, dt)
            violated = pb_clamped or soc_clamped or not (
                scn.battery.i_min <= i_b <= scn.battery.i_max)

            light = corridor.next_light(states[i].position)
            d_light = (light - states[i].position) if light is not None else -1.0
            trace.append(
                i, t=t, s=states[i].position, v=v_i, u=controls[i],
                soc=socs[i], throttle=throttles[i], p_dem=demands[i],
                p_en=p_en, p_b=p_b, i_b=i_b, fuel_g=fuel_kg[i] * KG_TO_G,
                d_next_light=d_light,
                light_state=light_phase(t, corridor.timing),
                mpc_iterations=diag[i]["iterations"],
                mpc_residual=diag[i]["residual"],
                mpc_status=diag[i]["status"],
                window_violation=diag[i]["window_violation"],
                stop_required=diag[i]["stop_required"],
                pb_clamped=int(pb_clamped), soc_clamped=int(soc_clamped),
                cold_state=cold_flags[i], lower_violation=int(violated),
            )

            fuel_kg[i] += mdot * dt
            socs[i] = soc_next
            window_violations[i] += diag[i]["window_violation"]
            stop_required_steps[i] += diag[i]["stop_required"]
            cold_states[i] += cold_flags[i]

            v_new = new_states[i].velocity
            if v_new < min_velocity[i]:
                min_velocity[i] = v_new
            if v_new < 0.1 and not below[i]:
                stops[i] += 1
                below[i] = True
            elif v_new >= 0.1:
                below[i] = False
            if not crossed[i] and new_states[i].position - start_pos[i] >= scn.goal_distance:
                crossed[i] = True
                travel_time[i] = (k + 1) * dt
                fuel_at_goal[i] = fuel_kg[i]
                soc_at_goal[i] = socs[i]

        states = new_states

    total_wall = time.perf_counter() - wall_start

    vehicles = []
    for i in range(n):
        timeout = not crossed[i]
        raw_g = (fuel_at_goal[i] if crossed[i] else fuel_kg[i]) * KG_TO_G
        soc_f = soc_at_goal[i] if crossed[i] else socs[i]
        vehicles.append(VehicleMetrics(
            vehicle=i,
            travel_time=travel_time[i],
            raw_fuel_g=raw_g,
            corrected_fuel_g=soc_corrected_fuel(raw_g, soc_f - scn.soc_init, scn),
            soc_initial=scn.soc_init,
            soc_final=soc_f,
            stops=stops[i],
            min_velocity=min_velocity[i],
            window_violations=window_violations[i],
            stop_required_steps=stop_required_steps[i],
            cold_states=cold_states[i],
            timeout=timeout,
        ))
    finite_times = [m.travel_time for m in vehicles if not m.timeout]
    fleet = {
        "travel_time_mean": float(np.mean(finite_times)) if finite_times else math.nan,
        "raw_fuel_mean_g": float(np.mean([m.raw_fuel_g for m in vehicles])),
        "corrected_fuel_mean_g": float(np.mean([m.corrected_fuel_g for m in vehicles])),
        "stops_total": int(sum(m.stops for m in vehicles)),
        "min_velocity": float(min(m.min_velocity for m in vehicles)),
        "timeouts": int(sum(m.timeout for m in vehicles)),
    }
    metrics = Metrics(
        vehicles=vehicles,
        fleet=fleet,
        timing={"total_s": total_wall, "higher_level_s": higher_wall,
                "lower_level_s": lower_wall},
        scenario_name=scn.name,
        seed=scn.seed,
        controller=f"{higher}+{lower}",
    )
    return trace, metrics


def estimate_fleet_tpms(scn: Scenario, trace: SimTrace):
    """Per-vehicle (or fleet-pooled) transition models from a trace."""
    spec = scn.mdp.quantizer
    if scn.tpm_scope == "fleet":
        samples = []
        for vid in range(trace.n_vehicles):
            samples.extend(zip(trace.column(vid, "p_dem"),
                               trace.column(vid, "v")))
        shared = estimate_tpm(samples, spec)
        return {vid: shared for vid in range(trace.n_vehicles)}
    return {
        vid: estimate_tpm(
            list(zip(trace.column(vid, "p_dem"), trace.column(vid, "v"))), spec)
        for vid in range(trace.n_vehicles)
    }


def prepare_training(scn: Scenario, higher: str | None = None,
                     need_q: bool = True,
                     episodes: int | None = None) -> FleetTraining:
    """Three-phase protocol feeding the closed loop.

    Phase 1 runs the selected higher level with the charge-neutral
    placeholder to produce speed traces; phase 2 estimates the demand
    transition models and (optionally) trains one Q table per vehicle.
    """
    wall0 = time.perf_counter()
    higher = higher or scn.higher
    profile_trace, _ = _simulate(scn, higher, "neutral", None)
    tpms = estimate_fleet_tpms(scn, profile_trace)
    qtables: dict[int, QTable] = {}
    results: dict[int, TrainResult] = {}
    if need_q:
        schedule = scn.schedule
        if episodes is not None:
            schedule = LearningSchedule(
                episodes=episodes, eps0=schedule.eps0,
                eps_decay=schedule.eps_decay)
        for vid in range(scn.n_vehicles):
            rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence((scn.seed, 7, vid))))
            res = train(
                scn.mdp, tpms[vid], scn.powertrain,
                v_profile=profile_trace.column(vid, "v"),
                rng=rng, schedule=schedule,
                p_dem_init=profile_trace.column(vid, "p_dem")[0],
                soc0=scn.soc_init,
            )
            qtables[vid] = res.qtable
            results[vid] = res
    return FleetTraining(
        tpms=tpms, qtables=qtables, results=results,
        profile_trace=profile_trace,
        wall_clock_s=time.perf_counter() - wall0,
    )


def audit_no_collision(trace: SimTrace) -> bool:
    """No follower position may ever exceed its leader's position."""
    n = trace.n_vehicles
    if n < 2:
        return True
    length = min(trace.n_steps(v) for v in range(n))
    pos = np.array([trace.column(v, "s")[:length] for v in range(n)])
    order = np.argsort(-pos[:, 0])
    ordered = pos[order]
    return bool(np.all(ordered[:-1] >= ordered[1:]))


def audit_power_balance(trace: SimTrace, scn: Scenario, rel_tol: float = 1e-6):
    """Re-derive the demand from (v, a) and check the recorded power split.

    Returns the worst relative residual over unclamped steps. The
    recombination is (p_en + p_b * eta) * eta_tr with eta the motor factor
    on discharge and its inverse on charge.
    """
    eff = scn.efficiencies
    params = scn.vehicle
    worst = 0.0
    for vid in range(trace.n_vehicles):
        v = np.array(trace.column(vid, "v"))
        u_p_dem = np.array(trace.column(vid, "p_dem"))
        p_en = np.array(trace.column(vid, "p_en"))
        p_b = np.array(trace.column(vid, "p_b"))
        clamped = np.array(trace.column(vid, "pb_clamped"), dtype=bool)
        if len(v) < 2:
            continue
        a = (v[1:] - v[:-1]) / scn.dt
        recomputed = np.array([
            power_demand(float(v[i]), float(a[i]), params)
            for i in range(len(a))
        ])
        eta = np.where(p_b >= 0.0, eff.motor, 1.0 / eff.motor)
        recombined = (p_en + p_b * eta) * eff.transmission
        steps = ~clamped[:-1]
        if not steps.any():
            continue
        resid = np.abs(u_p_dem[:-1] - recomputed) + np.abs(
            u_p_dem[:-1] - recombined[:-1])
        scale = np.maximum(1.0, np.abs(u_p_dem[:-1]))
        worst = max(worst, float((resid[steps] / scale[steps]).max()))
    return worst


def compare_metrics(metrics_a: Metrics, metrics_b: Metrics) -> dict:
    """Savings of arm B relative to arm A (positive = B better/lower)."""

    def saving(a, b):
        if a == 0 or not math.isfinite(a) or not math.isfinite(b):
            return math.nan
        return (a - b) / a * 100.0

    per_vehicle = []
    for ma, mb in zip(metrics_a.vehicles, metrics_b.vehicles):
        per_vehicle.append({
            "vehicle": ma.vehicle,
            "travel_time_saving_pct": saving(ma.travel_time, mb.travel_time),
            "fuel_saving_pct": saving(ma.corrected_fuel_g, mb.corrected_fuel_g),
        })
    return {
        "arm_a": metrics_a.controller,
        "arm_b": metrics_b.controller,
        "seed": metrics_a.seed,
        "per_vehicle": per_vehicle,
        "fleet": {
            "travel_time_saving_pct": saving(
                metrics_a.fleet["travel_time_mean"],
                metrics_b.fleet["travel_time_mean"]),
            "fuel_saving_pct": saving(
                metrics_a.fleet["corrected_fuel_mean_g"],
                metrics_b.fleet["corrected_fuel_mean_g"]),
            "wall_clock_saving_pct": saving(
                metrics_a.timing["total_s"], metrics_b.timing["total_s"]),
        },
    }
