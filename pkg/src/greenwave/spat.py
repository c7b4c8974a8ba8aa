"""Traffic-signal phase model and speed-window computation.

All lights on the corridor share one fixed red/green schedule. From the
published schedule and the distance to the next downstream light, each
vehicle gets a target velocity (arrive at the start of a green interval, or
ride the current green) and a speed window [v_lower, v_upper]: any constant
speed strictly inside the window reaches the light while it is green.

Phase convention: a cycle starts red; time k is red when mod(k, t_cy) is in
the closed interval [0, t_r] and green otherwise. Both window endpoints map
to the exact red/green flip instants, which this convention classifies as
red, so the arrival guarantee is for speeds strictly inside the window.
"""

from dataclasses import dataclass
import bisect
import math

from .dynamics import VehicleParams, passive_accel

RED = "red"
GREEN = "green"

# Extra green windows tried beyond the immediate one before declaring that
# the vehicle cannot reach any green interval at an admissible speed.
WINDOW_SEARCH_SPAN = 5


class InfeasibleWindowError(Exception):
    """No green window within the search span admits a speed >= v_min."""


@dataclass(frozen=True)
class SignalTiming:
    """Red/green durations of the shared signal schedule (seconds)."""

    red: float = 30.0
    green: float = 15.0

    def __post_init__(self):
        if self.red <= 0 or self.green <= 0:
            raise ValueError("red and green durations must be positive")

    @property
    def cycle(self) -> float:
        return self.red + self.green


@dataclass(frozen=True)
class Corridor:
    """Single-lane corridor geometry plus the shared signal schedule."""

    light_positions: tuple  # m, strictly increasing
    timing: SignalTiming
    v_min: float = 0.0   # m/s, minimum allowable speed
    v_max: float = 20.0  # m/s, road speed limit
    total_length: float = 5000.0  # m

    def __post_init__(self):
        pos = tuple(self.light_positions)
        object.__setattr__(self, "light_positions", pos)
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise ValueError("light positions must be strictly increasing")
        if pos and not (0.0 < pos[0] and pos[-1] <= self.total_length):
            raise ValueError("light positions must lie in (0, total_length]")
        if not (0.0 <= self.v_min < self.v_max):
            raise ValueError("need 0 <= v_min < v_max")

    def next_light(self, s: float):
        """Position of the nearest light strictly downstream of s, or None."""
        i = bisect.bisect_right(self.light_positions, s)
        if i >= len(self.light_positions):
            return None
        return self.light_positions[i]


@dataclass(frozen=True)
class SpeedWindow:
    """Admissible speed band toward the next light at one time instant."""

    v_target: float      # m/s, upper edge; preferred speed
    v_lower: float       # m/s
    v_upper: float       # m/s, equals v_target
    window_index: int    # green-window counter K_w
    light_state: str     # RED or GREEN at the evaluation instant


def light_phase(k: float, timing: SignalTiming) -> str:
    """Signal phase at time k: red on [0, t_r] of each cycle, else green."""
    if k < 0.0:
        raise ValueError("k must be non-negative")
    m = math.fmod(k, timing.cycle)
    return RED if m <= timing.red else GREEN


def next_window_index(k: float, timing: SignalTiming) -> int:
    """Smallest integer K_w with K_w * t_cy strictly greater than k."""
    if k < 0.0:
        raise ValueError("k must be non-negative")
    return int(math.floor(k / timing.cycle)) + 1


def compute_window(k: float, d_ia: float, corridor: Corridor) -> SpeedWindow:
    """Target velocity and speed window for a vehicle d_ia metres before a light.

    On green, if the light can still be reached before the current green ends
    at the speed limit, the target is v_max and the lower edge is the
    green-end arrival speed. Otherwise (and whenever the phase is red) the
    target aims at the start of a green window and the lower edge at its end;
    windows whose green end cannot be reached at v_max are skipped. A target
    faster than v_max is clamped: arriving mid-green is still inside the
    window. If even the slowest admissible speed overshoots every searched
    green window, the vehicle has to stop and InfeasibleWindowError is raised.
    """
    if d_ia <= 0.0:
        raise ValueError("d_ia must be positive")
    timing = corridor.timing
    t_cy = timing.cycle
    phase = light_phase(k, timing)
    k_w = next_window_index(k, timing)

    if phase == GREEN:
        dt_end = k_w * t_cy - k
        assert dt_end > 0.0, "window selection must keep denominators positive"
        v_end = d_ia / dt_end
        if v_end < corridor.v_max:
            # Current green is reachable: ride it at the speed limit. The
            # comparison is strict so the band never collapses onto the
            # single speed arriving exactly at the green-end flip.
            v_l = max(corridor.v_min, v_end)
            return SpeedWindow(corridor.v_max, v_l, corridor.v_max, k_w, phase)
        w = k_w + 1
    else:
        w = k_w

    for window in range(w, w + WINDOW_SEARCH_SPAN + 1):
        dt_start = window * t_cy - timing.green - k
        dt_end = window * t_cy - k
        if dt_start <= 0.0:
            continue  # at the red->green flip instant; aim for the next window
        v_tar = d_ia / dt_start
        v_l = d_ia / dt_end
        if v_l >= corridor.v_max:
            continue  # cannot reach this window's green interior at v_max
        v_tar = min(v_tar, corridor.v_max)  # mid-green arrival is acceptable
        if v_tar < corridor.v_min:
            # Later windows only lower the target further: the vehicle
            # cannot ride above v_min and still hit a green interval.
            raise InfeasibleWindowError(
                f"no admissible speed reaches a green window (k={k:.1f}, d={d_ia:.1f})"
            )
        v_l = max(corridor.v_min, min(v_l, v_tar))
        return SpeedWindow(v_tar, v_l, v_tar, window, phase)

    raise InfeasibleWindowError(
        f"window search exhausted (k={k:.1f}, d={d_ia:.1f})"
    )


def target_velocity(k: float, d_ia: float, corridor: Corridor) -> float:
    """Speed that reaches the next light during a green interval (m/s)."""
    return compute_window(k, d_ia, corridor).v_target


def velocity_window(k: float, d_ia: float, corridor: Corridor) -> SpeedWindow:
    """Full admissible speed band (see ``compute_window``)."""
    return compute_window(k, d_ia, corridor)


def free_window(corridor: Corridor) -> SpeedWindow:
    """Window used past the last light: the full [v_min, v_max] band."""
    return SpeedWindow(corridor.v_max, corridor.v_min, corridor.v_max, 0, GREEN)


def control_bounds(
    window: SpeedWindow, v_prev: float, params: VehicleParams, dt: float
):
    """Per-step force bounds that keep the next velocity inside the window.

    Returns (u_lower, u_upper, violated). The raw bounds place
    v_prev + (passive + u) dt inside [v_lower, v_upper]; they are then
    intersected with the vehicle's [u_min, u_max]. An empty intersection
    collapses to the nearest feasible singleton and sets the violated flag
    (the window cannot be honoured this step).
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    p_hat = passive_accel(params, v_prev)
    u_l = (window.v_lower - v_prev) / dt - p_hat
    u_u = (window.v_upper - v_prev) / dt - p_hat
    violated = False
    if u_l > params.u_max:
        return params.u_max, params.u_max, True
    if u_u < params.u_min:
        return params.u_min, params.u_min, True
    lo = max(u_l, params.u_min)
    hi = min(u_u, params.u_max)
    return lo, hi, violated
