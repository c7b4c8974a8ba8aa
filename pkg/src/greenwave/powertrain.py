"""Parallel hybrid-electric powertrain plant.

Covers the wheel power demand, a gridded diesel-engine efficiency map with
throttle semantics, the engine/battery power balance, and the battery
equivalent-circuit state-of-charge dynamics.

Units are SI throughout: the drag term of the demand model is written as
0.5 * rho * Cd * A * v^3 (the km/h-based form with the 21.15 constant is
numerically equivalent after unit conversion).

The published engine data is figure-only, so the efficiency map here is a
synthetic Willans-style surface: peak efficiency 0.36 at 75% load and
mid-speed, falling off concavely toward the edges, sampled on a 20x20
(torque, speed) grid and interpolated bilinearly. Fuel-quantity results are
therefore directional, not gram-exact against any dyno map.
"""

from dataclasses import dataclass, field
import io
import math

import numpy as np

from .dynamics import VehicleParams, GRAVITY


@dataclass(frozen=True)
class Efficiencies:
    """Driveline efficiency constants shared by both control levels."""

    transmission: float = 0.9   # fuel tank/powertrain to wheels
    motor: float = 0.95         # traction motor
    recuperation: float = 0.9 * 0.95  # constant regen-path efficiency

    def __post_init__(self):
        for name in ("transmission", "motor", "recuperation"):
            val = getattr(self, name)
            if not (0.0 < val <= 1.0):
                raise ValueError(f"{name} efficiency must be in (0, 1]")


def _load_shape(x: np.ndarray) -> np.ndarray:
    # Concave bump over load ratio, peaking at 75% load. Concavity in torque
    # keeps T*n/eta monotone in torque, i.e. more torque never burns less fuel.
    return 1.0 - 1.2 * (x - 0.75) ** 2


def _speed_shape(n: np.ndarray, n_min: float, n_max: float) -> np.ndarray:
    mid = 0.5 * (n_min + n_max)
    half = 0.5 * (n_max - n_min)
    return 1.0 - 0.5 * ((n - mid) / half) ** 2


@dataclass
class EngineModel:
    """Diesel engine: torque curve, gridded efficiency map, fuel rate."""

    torque_peak: float = 200.0      # Nm
    power_rated: float = 100e3      # W
    n_min: float = 110.0            # rad/s
    n_max: float = 390.0            # rad/s
    coupling_ratio: float = 19.5    # rad/s of engine speed per m/s of vehicle speed
    eta_peak: float = 0.36
    lhv: float = 42.5e6             # J/kg, diesel lower heating value
    idle_rate: float = 0.15e-3      # kg/s burned at zero throttle while moving
    grid_points: int = 20

    torque_grid: np.ndarray = field(init=False, repr=False)
    speed_grid: np.ndarray = field(init=False, repr=False)
    eta_grid: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.torque_grid = np.linspace(0.0, self.torque_peak, self.grid_points)
        self.speed_grid = np.linspace(self.n_min, self.n_max, self.grid_points)
        tt, nn = np.meshgrid(self.torque_grid, self.speed_grid, indexing="ij")
        load = tt / np.minimum(self.torque_peak, self.power_rated / nn)
        self.eta_grid = (
            self.eta_peak
            * _load_shape(load)
            * _speed_shape(nn, self.n_min, self.n_max)
        )
        if not (self.eta_grid > 0.0).all():
            raise ValueError("efficiency map must be positive everywhere")
        if float(self.eta_grid.max()) > 0.45:
            raise ValueError("efficiency map exceeds the 0.45 plausibility cap")

    def max_torque(self, n: float) -> float:
        """Torque limit at engine speed n: full torque capped by rated power."""
        return min(self.torque_peak, self.power_rated / n)

    def shaft_speed(self, v: float) -> float:
        """Engine speed for vehicle speed v through the single fixed gear."""
        return min(max(self.coupling_ratio * v, self.n_min), self.n_max)

    def efficiency(self, torque: float, n: float) -> float:
        """Bilinear interpolation of the gridded efficiency map."""
        tg, ng = self.torque_grid, self.speed_grid
        it = min(int((torque - tg[0]) / (tg[1] - tg[0])), len(tg) - 2)
        it = max(it, 0)
        inn = min(int((n - ng[0]) / (ng[1] - ng[0])), len(ng) - 2)
        inn = max(inn, 0)
        ft = (torque - tg[it]) / (tg[it + 1] - tg[it])
        fn = (n - ng[inn]) / (ng[inn + 1] - ng[inn])
        ft = min(max(ft, 0.0), 1.0)
        fn = min(max(fn, 0.0), 1.0)
        e = self.eta_grid
        return float(
            e[it, inn] * (1 - ft) * (1 - fn)
            + e[it + 1, inn] * ft * (1 - fn)
            + e[it, inn + 1] * (1 - ft) * fn
            + e[it + 1, inn + 1] * ft * fn
        )

    def export_map_csv(self) -> str:
        """Efficiency map as CSV text (rows: torque, columns: engine speed)."""
        buf = io.StringIO()
        buf.write("torque_nm\\speed_rad_s," +
                  ",".join(repr(float(n)) for n in self.speed_grid) + "\n")
        for i, t in enumerate(self.torque_grid):
            row = ",".join(repr(float(x)) for x in self.eta_grid[i])
            buf.write(f"{float(t)!r},{row}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class BatteryModel:
    """Equivalent-circuit battery with SOC-dependent V_oc and resistance."""

    capacity: float = 6.0 * 3600.0   # C (6 Ah)
    voc_base: float = 235.0          # V; V_oc = voc_base + voc_slope * SOC
    voc_slope: float = 37.5          # V per unit SOC
    rin_base: float = 0.12           # ohm; r_in = rin_base + rin_slope * SOC
    rin_slope: float = -0.04         # ohm per unit SOC
    p_min: float = -30e3             # W (charging)
    p_max: float = 30e3              # W (discharging)
    i_min: float = -120.0            # A
    i_max: float = 120.0             # A
    soc_min: float = 0.4
    soc_max: float = 0.8
    v_nominal: float = 250.0         # V, used for SOC-to-fuel energy accounting

    def v_oc(self, soc: float) -> float:
        return self.voc_base + self.voc_slope * soc

    def r_in(self, soc: float) -> float:
        return self.rin_base + self.rin_slope * soc


@dataclass
class PowertrainState:
    """Energy state of one vehicle's powertrain."""

    soc: float
    throttle: float = 0.0
    engine_torque: float = 0.0   # Nm
    engine_speed: float = 0.0    # rad/s
    battery_power: float = 0.0   # W
    fuel_cumulative: float = 0.0 # kg


def power_demand(v: float, a: float, params: VehicleParams) -> float:
    """Wheel power (W) required to drive at speed v with acceleration a.

    Negative values are braking power available for recuperation.
    """
    if v < 0.0:
        raise ValueError("v must be non-negative")
    return (
        params.mass_factor * params.mass * a * v
        + params.drag_factor * v ** 3
        + params.mass * GRAVITY * params.rolling_coeff * v
    )


def engine_output(th: float, v: float, model: EngineModel):
    """Engine operating point for throttle th at vehicle speed v.

    Returns (torque Nm, shaft speed rad/s, power W, fuel rate kg/s). At zero
    throttle no torque is produced; the engine idles (fixed fuel rate) while
    the vehicle moves and is off when stationary.
    """
    if not (0.0 <= th <= 1.0):
        raise ValueError("throttle must be in [0, 1]")
    n = model.shaft_speed(v)
    if th == 0.0:
        fuel = model.idle_rate if v > 0.0 else 0.0
        return 0.0, n, 0.0, fuel
    torque = th * model.max_torque(n)
    power = torque * n
    fuel = power / (model.efficiency(torque, n) * model.lhv)
    return torque, n, power, fuel


def split_power(p_dem: float, p_en: float, eff: Efficiencies, battery: BatteryModel):
    """Battery power that balances demand against the engine contribution.

    Discharge side divides the shortfall by the motor efficiency; on the
    charge side the efficiency multiplies (losses sit on whichever side the
    power flows through). Returns (p_b W, clamped flag); the clamp keeps p_b
    inside the battery power envelope.
    """
    residual = p_dem / eff.transmission - p_en
    p_b = residual / eff.motor if residual >= 0.0 else residual * eff.motor
    if p_b > battery.p_max:
        return battery.p_max, True
    if p_b < battery.p_min:
        return battery.p_min, True
    return p_b, False


def battery_step(soc: float, p_b: float, model: BatteryModel, dt: float):
    """Integrate SOC one step under battery power p_b.

    Returns (soc_next, i_b A, clamped flag). Current follows the equivalent
    circuit root; positive current discharges. The square-root argument must
    be non-negative (guaranteed upstream by the battery power clamp); a
    violation here is a programming error and aborts the step.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    v_oc = model.v_oc(soc)
    r_in = model.r_in(soc)
    disc = v_oc * v_oc - 4.0 * r_in * p_b
    if disc < 0.0:
        raise ArithmeticError(
            "battery power exceeds the deliverable limit; upstream clamp failed"
        )
    i_b = (v_oc - math.sqrt(disc)) / (2.0 * r_in)
    soc_next = soc - i_b * dt / model.capacity
    clamped = False
    if soc_next > model.soc_max:
        soc_next, clamped = model.soc_max, True
    elif soc_next < model.soc_min:
        soc_next, clamped = model.soc_min, True
    return soc_next, i_b, clamped


def feasible(
    th: float,
    soc: float,
    v: float,
    a: float,
    params: VehicleParams,
    engine: EngineModel,
    battery: BatteryModel,
    eff: Efficiencies,
):
    """Check every powertrain box constraint at the implied operating point.

    Returns the list of violated constraint names (empty means feasible).
    Battery power and current are evaluated before clamping, i.e. as the
    demand actually implies them.
    """
    violations = []
    if not (battery.soc_min <= soc <= battery.soc_max):
        violations.append("soc")
    if not (0.0 <= th <= 1.0):
        violations.append("throttle")
        th = min(max(th, 0.0), 1.0)
    n = engine.shaft_speed(v)
    torque = th * engine.max_torque(n)
    if not (0.0 <= torque <= engine.torque_peak):
        violations.append("engine_torque")
    if not (engine.n_min <= n <= engine.n_max):
        violations.append("engine_speed")
    p_en = torque * n
    residual = power_demand(v, a, params) / eff.transmission - p_en
    p_b = residual / eff.motor if residual >= 0.0 else residual * eff.motor
    if not (battery.p_min <= p_b <= battery.p_max):
        violations.append("battery_power")
        p_b = min(max(p_b, battery.p_min), battery.p_max)
    v_oc = battery.v_oc(soc)
    r_in = battery.r_in(soc)
    disc = v_oc * v_oc - 4.0 * r_in * p_b
    if disc < 0.0:
        violations.append("battery_voltage")
    else:
        i_b = (v_oc - math.sqrt(disc)) / (2.0 * r_in)
        if not (battery.i_min <= i_b <= battery.i_max):
            violations.append("battery_current")
    return violations
