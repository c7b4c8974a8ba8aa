"""Longitudinal point-mass dynamics of a single vehicle.

State is [position, velocity]; the control input is traction/braking force
per unit mass (m/s^2). Resistive terms (aero drag, rolling friction, grade)
are collected in ``passive_accel``; integration is forward Euler at the
simulation sample time.
"""

from dataclasses import dataclass
import math

GRAVITY = 9.81  # m/s^2, fixed


@dataclass(frozen=True)
class VehicleParams:
    """Physical constants of one vehicle."""

    mass: float = 1000.0         # kg
    drag_coeff: float = 0.3      # aerodynamic coefficient (-)
    air_density: float = 1.205   # kg/m^3
    frontal_area: float = 2.25   # m^2
    rolling_coeff: float = 0.008 # rolling resistance (-)
    road_grade: float = 0.0      # rad
    u_min: float = -3.0          # m/s^2, braking force per unit mass
    u_max: float = 2.5           # m/s^2, traction force per unit mass
    mass_factor: float = 1.05    # rotating-mass factor (-)

    def __post_init__(self):
        if self.mass <= 0 or self.frontal_area <= 0 or self.air_density <= 0:
            raise ValueError("mass, frontal_area and air_density must be positive")
        if self.drag_coeff < 0 or self.rolling_coeff < 0:
            raise ValueError("drag_coeff and rolling_coeff must be non-negative")
        if self.mass_factor < 1.0:
            raise ValueError("mass_factor must be >= 1")
        if not (self.u_min < 0.0 < self.u_max):
            raise ValueError("need u_min < 0 < u_max")

    @property
    def drag_factor(self) -> float:
        """0.5 * rho * Cd * A (N per (m/s)^2)."""
        return 0.5 * self.air_density * self.drag_coeff * self.frontal_area


@dataclass(frozen=True)
class VehicleState:
    """Kinematic state of one vehicle at time t."""

    position: float  # m
    velocity: float  # m/s
    time: float = 0.0  # s

    def __post_init__(self):
        if self.velocity < 0.0:
            raise ValueError("velocity must be non-negative")


def passive_accel(params: VehicleParams, v: float) -> float:
    """Acceleration from drag, rolling friction and grade at speed v (m/s).

    Returns the force-per-unit-mass the vehicle experiences with zero control
    input. At v = 0 rolling resistance cannot push the vehicle backwards, so
    the caller (``step_dynamics``) clamps velocity at zero.
    """
    if v < 0.0:
        raise ValueError("v must be non-negative")
    g = GRAVITY
    return (
        -params.drag_factor / params.mass * v * v
        - params.rolling_coeff * g
        - g * math.sin(params.road_grade)
    )


def passive_accel_derivative(params: VehicleParams, v: float) -> float:
    """d(passive_accel)/dv, used by the speed planner's sensitivity rollout."""
    return -2.0 * params.drag_factor / params.mass * v


def step_dynamics(
    state: VehicleState, params: VehicleParams, u: float, dt: float
) -> VehicleState:
    """One forward-Euler step: s' = s + v dt, v' = max(0, v + (p_hat + u) dt).

    Velocity is clamped at zero (resistive terms only oppose motion).
    Non-finite inputs are rejected.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if not (math.isfinite(state.position) and math.isfinite(state.velocity)
            and math.isfinite(u)):
        raise ValueError("non-finite state or control")
    v = state.velocity
    v_next = v + (passive_accel(params, v) + u) * dt
    if v_next < 0.0:
        v_next = 0.0
    return VehicleState(
        position=state.position + v * dt,
        velocity=v_next,
        time=state.time + dt,
    )
