"""Receding-horizon speed planner.

Each tick, every vehicle solves a short-horizon trajectory optimization:
minimize fuel per metre plus spacing, target-tracking and control-effort
penalties, subject to per-step force bounds that transcribe the signal speed
window onto the control (and to a hard safe-following cap against the
predicted lead trajectory). The first control of the solution is applied and
the shifted solution warm-starts the next tick.

The solver is a projected-Newton method: exact analytic gradients of the
horizon objective, a Gauss-Newton model of its quadratic terms, active-set
handling of the per-step box constraints, and Armijo backtracking on the
projected arc. The fuel surrogate has a kink at u = 0 (traction/regen
indicator flip), so stationarity is measured against the subdifferential.
"""

from dataclasses import dataclass
import math

import numpy as np

from .dynamics import (
    VehicleParams,
    VehicleState,
    passive_accel,
    passive_accel_derivative,
)
from .powertrain import Efficiencies
from .spat import (
    Corridor,
    InfeasibleWindowError,
    SpeedWindow,
    compute_window,
    control_bounds,
    free_window,
)

GRAVITY = 9.81


@dataclass(frozen=True)
class MpcWeights:
    """Stage-cost weights: fuel, spacing, target tracking, control effort."""

    phi1: float
    phi2: float
    phi3: float
    phi4: float

    def __post_init__(self):
        if min(self.phi1, self.phi2, self.phi3, self.phi4) < 0.0:
            raise ValueError("weights must be non-negative")


@dataclass(frozen=True)
class MpcConfig:
    """Horizon layout, car-following constants and solver settings."""

    horizon: int = 10           # steps
    dt: float = 0.5             # s
    critical_gap: float = 10.0  # m, desired standstill spacing
    headway: float = 1.0        # s, headway time
    tolerance: float = 1e-6     # stationarity residual
    max_iterations: int = 50
    # Weight schedule: phi1 = c1*w, phi3 = c3*(1 - w) with w the normalized
    # window width; phi2 = c2*exp(-gap/gap_ref); phi4 = c4.
    c1: float = 1.0
    c2: float = 0.5
    c3: float = 1.0
    c4: float = 0.05
    gap_ref: float = 20.0       # m
    fuel_lhv: float = 42.5e6    # J/kg

    def __post_init__(self):
        if self.horizon < 2 or self.dt <= 0.0:
            raise ValueError("need horizon >= 2 and dt > 0")
        if self.critical_gap <= 0.0 or self.headway <= 0.0:
            raise ValueError("critical_gap and headway must be positive")


@dataclass
class HorizonPlan:
    """Solved control/velocity/position plan over one horizon."""

    controls: np.ndarray    # (T,)
    velocities: np.ndarray  # (T+1,)
    positions: np.ndarray   # (T+1,)
    objective: float
    status: str             # "converged" | "degraded"
    iterations: int
    residual: float
    window_violation: bool = False
    stop_required: bool = False


@dataclass
class LeadPrediction:
    """Predicted trajectory of the vehicle ahead over the same horizon."""

    positions: np.ndarray   # (T+1,)
    velocities: np.ndarray  # (T+1,)


def schedule_weights(window: SpeedWindow, gap, cfg: MpcConfig,
                     corridor: Corridor) -> MpcWeights:
    """Weights for one solve, from the window width and the current gap.

    A wide window shifts emphasis to fuel (phi1 up, phi3 down); a narrow one
    to target tracking. The spacing weight rises exponentially as the gap to
    the front vehicle closes and vanishes for an unled vehicle.
    """
    span = corridor.v_max - corridor.v_min
    w = (window.v_upper - window.v_lower) / span
    w = min(max(w, 0.0), 1.0)
    if gap is None or gap == math.inf:
        phi2 = 0.0
    else:
        if gap < 0.0:
            raise ValueError("gap must be non-negative")
        phi2 = cfg.c2 * math.exp(-gap / cfg.gap_ref)
    return MpcWeights(phi1=cfg.c1 * w, phi2=phi2, phi3=cfg.c3 * (1.0 - w),
                      phi4=cfg.c4)


def surrogate_fuel_rate(v: float, u: float, params: VehicleParams,
                        eff: Efficiencies, lhv: float) -> float:
    """Fuel-rate surrogate (kg/s) for the traction power at one operating point.

    Traction (u > 0) adds v*M*u of wheel power; braking enters through the
    recuperation-scaled term, penalizing kinetic energy thrown away.
    """
    p_w = (
        params.drag_factor * v ** 3
        + params.mass * GRAVITY * v * (params.rolling_coeff + params.road_grade)
    )
    if u > 0.0:
        p_w += v * params.mass * u
    else:
        p_w += -eff.recuperation * v * params.mass * u
    return p_w / (eff.transmission * lhv)


def stage_cost(
    v: float,
    u: float,
    v_tar: float,
    lead,
    weights: MpcWeights,
    cfg: MpcConfig,
    params: VehicleParams,
    eff: Efficiencies,
    s_self: float = 0.0,
    horizon_distance: float = 1.0,
) -> float:
    """One stage of the horizon objective.

    ``lead`` is None or a (position, velocity) pair; the spacing term is
    omitted without a lead. ``horizon_distance`` is the predicted distance
    covered over the whole horizon (the fuel term's denominator).
    """
    fuel = surrogate_fuel_rate(v, u, params, eff, cfg.fuel_lhv)
    cost = weights.phi1 * fuel * cfg.dt / horizon_distance
    if lead is not None:
        s_j, v_j = lead
        x = cfg.critical_gap + cfg.headway * (v - v_j) + (s_self - s_j)
        cost += weights.phi2 * x * x
    cost += weights.phi3 * (v - v_tar) ** 2
    cost += weights.phi4 * u * u
    return cost


@dataclass
class HorizonObjective:
    """Horizon objective with exact gradients; windows and targets frozen."""

    v0: float
    s0: float
    v_targets: np.ndarray           # (T,)
    weights: MpcWeights
    cfg: MpcConfig
    params: VehicleParams
    eff: Efficiencies
    lead: LeadPrediction | None = None
    min_distance: float = 1.0       # guard on the fuel denominator

    def rollout(self, u: np.ndarray):
        """Forward-Euler trajectory plus state/control sensitivity matrices."""
        T = len(u)
        dt = self.cfg.dt
        p = self.params
        v = np.empty(T + 1)
        s = np.empty(T + 1)
        jv = np.zeros((T + 1, T))
        js = np.zeros((T + 1, T))
        v[0], s[0] = self.v0, self.s0
        for t in range(T):
            s[t + 1] = s[t] + v[t] * dt
            js[t + 1] = js[t] + dt * jv[t]
            vn = v[t] + (passive_accel(p, v[t]) + u[t]) * dt
            if vn <= 0.0:
                v[t + 1] = 0.0  # clamped: downstream sensitivity is zero
            else:
                v[t + 1] = vn
                jv[t + 1] = jv[t] * (1.0 + passive_accel_derivative(p, v[t]) * dt)
                jv[t + 1, t] = dt
        return v, s, jv, js

    def evaluate(self, u: np.ndarray, need_grad: bool = True):
        """Objective value; one-sided gradients when requested.

        Returns (cost, g_minus, g_plus, (v, s, jv, js)). g_minus/g_plus are
        the left/right derivatives, distinct only where some u_t == 0.
        """
        T = len(u)
        cfg, w, p = self.cfg, self.weights, self.params
        dt = cfg.dt
        v, s, jv, js = self.rollout(u)
        alpha = p.drag_factor
        roll = p.mass * GRAVITY * (p.rolling_coeff + p.road_grade)
        denom_eff = self.eff.transmission * cfg.fuel_lhv

        vt = v[:T]
        pos_u = u > 0.0
        p_w = alpha * vt ** 3 + roll * vt + np.where(
            pos_u, vt * p.mass * u, -self.eff.recuperation * vt * p.mass * u)
        mdot = p_w / denom_eff
        fuel_sum = float(np.sum(mdot) * dt)
        d_raw = s[T - 1] - s[0]
        d = max(d_raw, self.min_distance)

        track = vt - self.v_targets
        cost = w.phi1 * fuel_sum / d
        cost += w.phi3 * float(track @ track)
        cost += w.phi4 * float(u @ u)
        x = None
        if self.lead is not None:
            x = (cfg.critical_gap + cfg.headway * (vt - self.lead.velocities[:T])
                 + (s[:T] - self.lead.positions[:T]))
            cost += w.phi2 * float(x @ x)
        if not need_grad:
            return cost, None, None, (v, s, jv, js)

        grad = 2.0 * w.phi4 * u
        grad = grad + (2.0 * w.phi3 * track) @ jv[:T]
        if x is not None:
            grad = grad + (2.0 * w.phi2 * x) @ (cfg.headway * jv[:T] + js[:T])

        # Fuel term: d(mdot)/dv through the rollout plus the direct u slope,
        # and the denominator sensitivity when the distance guard is inactive.
        dmdot_dv = (3.0 * alpha * vt ** 2 + roll + np.where(
            pos_u, p.mass * u, -self.eff.recuperation * p.mass * u)) / denom_eff
        grad_fuel = (dmdot_dv * dt) @ jv[:T] / d
        if d_raw > self.min_distance:
            grad_fuel = grad_fuel - fuel_sum / (d * d) * js[T - 1]
        grad = grad + w.phi1 * grad_fuel

        slope_pos = vt * p.mass / denom_eff
        slope_neg = -self.eff.recuperation * vt * p.mass / denom_eff
        g_plus = grad + w.phi1 * np.where(u >= 0.0, slope_pos, slope_neg) * dt / d
        g_minus = grad + w.phi1 * np.where(u > 0.0, slope_pos, slope_neg) * dt / d
        return cost, g_minus, g_plus, (v, s, jv, js)

    def gauss_newton_hessian(self, jv: np.ndarray, js: np.ndarray) -> np.ndarray:
        T = jv.shape[1]
        w, cfg = self.weights, self.cfg
        jvt = jv[:T]
        h = 2.0 * w.phi4 * np.eye(T) + 2.0 * w.phi3 * jvt.T @ jvt
        if self.lead is not None:
            jx = cfg.headway * jvt + js[:T]
            h = h + 2.0 * w.phi2 * jx.T @ jx
        return h


def _effective_gradient(g_minus, g_plus):
    """Subgradient element nearest zero (handles the u = 0 kink)."""
    lo = np.minimum(g_minus, g_plus)
    hi = np.maximum(g_minus, g_plus)
    return np.where(lo > 0.0, lo, np.where(hi < 0.0, hi, 0.0))


def _projected_residual(u, g, lo, hi):
    return float(np.max(np.abs(u - np.clip(u - g, lo, hi))))


def _safe_follow_cap(v, s, lead_pos_next, lead_v_next, params, cfg, dt):
    """Upper force bound keeping the next state collision-safe.

    Gipps-style: bound the next velocity so the follower, braking at u_min,
    can always stop behind the lead doing the same, with half the critical
    gap as the floor distance.
    """
    margin = 0.5 * cfg.critical_gap
    gap_next = lead_pos_next - (s + v * dt)
    b = -params.u_min
    if gap_next <= margin:
        v_allow = 0.0
    else:
        v_allow = -b * dt + math.sqrt(
            b * b * dt * dt + lead_v_next * lead_v_next
            + 2.0 * b * (gap_next - margin)
        )
    return (v_allow - v) / dt - passive_accel(params, v)


def _control_boxes(objective, u, windows, lead, params, cfg):
    """Per-step control boxes from the current trajectory iterate."""
    T = len(u)
    dt = cfg.dt
    v, s, _, _ = objective.rollout(u)
    lo = np.empty(T)
    hi = np.empty(T)
    violation = False
    for t in range(T):
        l, h, viol = control_bounds(windows[t], v[t], params, dt)
        violation |= viol
        if lead is not None:
            h_safe = _safe_follow_cap(v[t], s[t], lead.positions[t + 1],
                                      lead.velocities[t + 1], params, cfg, dt)
            if h_safe < h:
                h = max(h_safe, params.u_min)
                if l > h:
                    l = h
                    violation = True
        lo[t], hi[t] = l, h
    return lo, hi, violation


def _projected_newton_step(objective, u, cost, g, h_mat, lo, hi):
    """One damped Newton step on the free set with Armijo backtracking."""
    at_lo = (u <= lo + 1e-12) & (g > 0.0)
    at_hi = (u >= hi - 1e-12) & (g < 0.0)
    free = ~(at_lo | at_hi)
    d = np.zeros(len(u))
    if free.any():
        h_ff = h_mat[np.ix_(free, free)]
        damp = 1e-8 * (1.0 + float(np.trace(h_ff)) / h_ff.shape[0])
        try:
            d[free] = np.linalg.solve(h_ff + damp * np.eye(h_ff.shape[0]),
                                      -g[free])
        except np.linalg.LinAlgError:
            d[free] = -g[free]
    if not np.any(d):
        d = -g
    alpha = 1.0
    for _ in range(30):
        u_new = np.clip(u + alpha * d, lo, hi)
        step = u_new - u
        if not np.any(step):
            break
        new_cost, _, _, _ = objective.evaluate(u_new, need_grad=False)
        if new_cost <= cost + 1e-4 * float(g @ step):
            return u_new
        alpha *= 0.5
    alpha = 1.0
    for _ in range(30):  # projected-gradient fallback
        u_new = np.clip(u - alpha * g, lo, hi)
        if not np.any(u_new - u):
            break
        new_cost, _, _, _ = objective.evaluate(u_new, need_grad=False)
        if new_cost < cost:
            return u_new
        alpha *= 0.5
    return u


def solve_horizon(
    state: VehicleState,
    windows,
    lead_prediction: LeadPrediction | None,
    cfg: MpcConfig,
    params: VehicleParams,
    eff: Efficiencies,
    weights: MpcWeights,
    warm_start: np.ndarray | None = None,
    stop_required: bool = False,
) -> HorizonPlan:
    """Solve one horizon problem under fixed per-step speed windows.

    ``windows`` must cover all T steps (the caller recomputes them against
    the then-nearest light under predicted positions). Window constraints
    are transcribed into per-step control boxes from the trajectory iterate
    and driven to a fixed point; an empty box collapses to its nearest
    feasible singleton and flags the plan. The safe-following cap against
    the lead prediction is a hard bound and wins over the window lower edge.
    """
    T = cfg.horizon
    if len(windows) != T:
        raise ValueError("windows must cover the full horizon")
    objective = HorizonObjective(
        v0=state.velocity, s0=state.position,
        v_targets=np.array([wd.v_target for wd in windows]),
        weights=weights, cfg=cfg, params=params, eff=eff,
        lead=lead_prediction,
    )

    if warm_start is not None and len(warm_start) == T:
        u = np.asarray(warm_start, dtype=float).copy()
    else:
        u = np.full(T, min(max(-passive_accel(params, state.velocity),
                               params.u_min), params.u_max))

    status = "degraded"
    window_violation = False
    prev_lo = prev_hi = None
    iterations = 0
    lo = hi = None

    for iterations in range(1, cfg.max_iterations + 1):
        lo, hi, window_violation = _control_boxes(
            objective, u, windows, lead_prediction, params, cfg)
        u = np.clip(u, lo, hi)
        cost, g_minus, g_plus, (v, s, jv, js) = objective.evaluate(u)
        g_eff = _effective_gradient(g_minus, g_plus)
        residual = _projected_residual(u, g_eff, lo, hi)
        boxes_stable = (
            prev_lo is not None
            and float(np.max(np.abs(lo - prev_lo))) <= 1e-9
            and float(np.max(np.abs(hi - prev_hi))) <= 1e-9
        )
        prev_lo, prev_hi = lo, hi
        if residual <= cfg.tolerance and boxes_stable:
            status = "converged"
            break
        h_mat = objective.gauss_newton_hessian(jv, js)
        u = _projected_newton_step(objective, u, cost, g_eff, h_mat, lo, hi)

    # Final consistency pass: boxes from the final trajectory, then report.
    lo, hi, box_violation = _control_boxes(
        objective, u, windows, lead_prediction, params, cfg)
    u = np.clip(u, lo, hi)
    cost, g_minus, g_plus, (v, s, _, _) = objective.evaluate(u)
    residual = _projected_residual(u, _effective_gradient(g_minus, g_plus),
                                   lo, hi)
    return HorizonPlan(
        controls=u, velocities=v, positions=s, objective=cost,
        status=status, iterations=iterations, residual=residual,
        window_violation=window_violation or box_violation,
        stop_required=stop_required,
    )


def horizon_windows(t0: float, positions, corridor: Corridor, dt: float):
    """Per-step speed windows along a predicted position sequence.

    Returns (windows, stop_required). Steps past the last light get the free
    window; a step from which no green window is reachable gets a stop
    window pinned at v_min.
    """
    windows = []
    stop_required = False
    for t, pos in enumerate(positions):
        light = corridor.next_light(pos)
        if light is None:
            windows.append(free_window(corridor))
            continue
        try:
            windows.append(compute_window(t0 + t * dt, light - pos, corridor))
        except InfeasibleWindowError:
            stop_required = True
            windows.append(SpeedWindow(corridor.v_min, corridor.v_min,
                                       corridor.v_min, 0, "red"))
    return windows, stop_required


def plan_step(
    fleet,
    t0: float,
    corridor: Corridor,
    cfg: MpcConfig,
    params: VehicleParams,
    eff: Efficiencies,
    warm_starts: dict | None = None,
):
    """Solve the fleet front-to-back and return per-vehicle plans.

    ``fleet`` is a sequence of VehicleStates ordered arbitrarily; vehicles
    are solved in descending position order so each follower sees the plan
    its lead vehicle just committed to. Returns a dict index -> HorizonPlan.
    Window sets are recomputed against the solution's predicted positions
    until they stabilize (at most three passes).
    """
    warm_starts = warm_starts or {}
    order = sorted(range(len(fleet)), key=lambda i: fleet[i].position,
                   reverse=True)
    plans: dict[int, HorizonPlan] = {}
    T = cfg.horizon
    for rank, idx in enumerate(order):
        state = fleet[idx]
        if rank == 0:
            lead = None
            gap = None
        else:
            lead_idx = order[rank - 1]
            lead_plan = plans[lead_idx]
            lead = LeadPrediction(positions=lead_plan.positions,
                                  velocities=lead_plan.velocities)
            gap = fleet[lead_idx].position - state.position

        warm = warm_starts.get(idx)
        if warm is not None and len(warm) == T:
            positions = _predict_positions(state, warm, params, cfg)
        else:
            positions = state.position + state.velocity * cfg.dt * np.arange(T)

        light = corridor.next_light(state.position)
        if light is None:
            window_now = free_window(corridor)
        else:
            try:
                window_now = compute_window(t0, light - state.position, corridor)
            except InfeasibleWindowError:
                window_now = SpeedWindow(corridor.v_min, corridor.v_min,
                                         corridor.v_min, 0, "red")
        weights = schedule_weights(window_now, gap, cfg, corridor)

        plan = None
        for _ in range(3):
            windows, stop_req = horizon_windows(t0, positions, corridor, cfg.dt)
            plan = solve_horizon(state, windows, lead, cfg, params, eff,
                                 weights, warm_start=warm,
                                 stop_required=stop_req)
            new_positions = plan.positions[:T]
            if float(np.max(np.abs(new_positions - positions))) <= 1e-9:
                break
            windows_new, _ = horizon_windows(t0, new_positions, corridor, cfg.dt)
            if all(_same_window(a, b) for a, b in zip(windows, windows_new)):
                break
            positions = new_positions
            warm = plan.controls
        plans[idx] = plan
    return plans


def _predict_positions(state, controls, params, cfg):
    v, s = state.velocity, state.position
    out = np.empty(cfg.horizon)
    for t in range(cfg.horizon):
        out[t] = s
        s = s + v * cfg.dt
        v = max(0.0, v + (passive_accel(params, v) + controls[t]) * cfg.dt)
    return out


def _same_window(a: SpeedWindow, b: SpeedWindow) -> bool:
    return (
        abs(a.v_target - b.v_target) <= 1e-9
        and abs(a.v_lower - b.v_lower) <= 1e-9
        and a.window_index == b.window_index
    )


def shift_warm_start(plan: HorizonPlan) -> np.ndarray:
    """Warm start for the next tick: drop the applied control, repeat the last."""
    u = plan.controls
    return np.concatenate([u[1:], u[-1:]])
