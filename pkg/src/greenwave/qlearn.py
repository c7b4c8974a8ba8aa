"""Tabular Q-learning for the engine/battery power split, plus a
value-iteration solver used as an independent reference in tests.

The decision state is (SOC level, demand bin, speed bin); the action is a
throttle level. Costs are minimized: fuel burn plus a quadratic penalty on
SOC deviation from its trip-initial value, with an additive penalty for
operating points that violate the powertrain envelope.

Episodes replay a speed profile while the power demand follows a synthetic
walk of the estimated transition model; the battery state of charge is
integrated continuously through the real plant equations and only quantized
for table lookup. ``snap_soc=True`` collapses the walk onto the SOC grid
itself (every step restarts from a level midpoint), which turns the process
into an exact finite MDP; that mode exists so training can be compared
against value iteration on identical toy problems.
"""

from bisect import bisect_right
from dataclasses import dataclass, field
import json
import math

import numpy as np

from .markov import QuantizerSpec, TransitionModel
from .powertrain import (
    BatteryModel,
    EngineModel,
    Efficiencies,
    battery_step,
    engine_output,
    split_power,
)

KG_TO_G = 1e3


@dataclass(frozen=True)
class Powertrain:
    """Plant bundle shared by the energy controllers."""

    engine: EngineModel
    battery: BatteryModel
    eff: Efficiencies


@dataclass(frozen=True)
class MdpSpec:
    """Grids, discount and reward weights of the power-split decision problem."""

    quantizer: QuantizerSpec = QuantizerSpec()
    soc_levels: int = 81
    soc_lo: float = 0.4
    soc_hi: float = 0.8
    throttle_levels: int = 11
    discount: float = 0.96      # tau
    soc_weight: float = 1000.0  # chi
    dt: float = 0.5             # s
    soc_ref: float = 0.6        # trip-initial SOC the chi term anchors to
    penalty: float = 1e3        # added cost per infeasible operating point

    def __post_init__(self):
        if not (0.0 < self.discount < 1.0):
            raise ValueError("discount must be in (0, 1)")
        if self.soc_levels < 2 or self.throttle_levels < 2:
            raise ValueError("state/action grids must have at least 2 levels")

    @property
    def soc_step(self) -> float:
        return (self.soc_hi - self.soc_lo) / (self.soc_levels - 1)

    @property
    def n_states(self) -> int:
        return self.soc_levels * self.quantizer.power_bins * self.quantizer.speed_bins

    @property
    def n_actions(self) -> int:
        return self.throttle_levels

    def soc_grid(self) -> np.ndarray:
        return np.linspace(self.soc_lo, self.soc_hi, self.soc_levels)

    def throttle_grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.throttle_levels)

    def soc_index(self, soc: float) -> int:
        i = int((soc - self.soc_lo) / self.soc_step + 0.5)
        return min(max(i, 0), self.soc_levels - 1)

    def state_index(self, soc: float, p_dem: float, v: float) -> int:
        q = self.quantizer
        n = q.power_index(p_dem)
        k = q.speed_index(v)
        return (self.soc_index(soc) * q.power_bins + n) * q.speed_bins + k


@dataclass(frozen=True)
class LearningSchedule:
    """Episode-indexed decay of the learning rate and exploration rate."""

    episodes: int = 10000
    eps0: float = 0.2
    eps_decay: float = 0.99

    def gamma(self, k: int) -> float:
        return 1.0 / math.sqrt(k + 2.0)

    def epsilon(self, k: int) -> float:
        return self.eps0 * self.eps_decay ** k


@dataclass
class QTable:
    """Action-value table with visit counts."""

    q: np.ndarray        # (S, A)
    visits: np.ndarray   # (S, A)
    episodes: int = 0

    def greedy(self, s: int) -> int:
        return int(np.argmin(self.q[s]))

    def greedy_policy(self) -> np.ndarray:
        return np.argmin(self.q, axis=1)

    def state_values(self) -> np.ndarray:
        return np.min(self.q, axis=1)


def reward(
    th: float,
    soc: float,
    soc_0: float,
    powertrain: Powertrain,
    v: float,
    spec: MdpSpec,
    infeasible: bool = False,
) -> float:
    """Single-step cost: fuel (g/s) plus chi-weighted squared SOC deviation.

    Fuel is expressed in g/s so the chi = 1000 term and the fuel term share
    magnitude. Infeasible operating points add the fixed penalty.
    """
    _, _, _, fuel = engine_output(th, v, powertrain.engine)
    r = (fuel * KG_TO_G + spec.soc_weight * (soc - soc_0) ** 2) * spec.dt
    if infeasible:
        r += spec.penalty
    return r


def epsilon_greedy(qtable: QTable, s: int, eps: float, rng: np.random.Generator) -> int:
    """Pick a uniformly random action with probability eps, else the greedy one."""
    if not (0.0 <= eps <= 1.0):
        raise ValueError("eps must be in [0, 1]")
    n_actions = qtable.q.shape[1]
    if rng.random() < eps:
        return int(rng.integers(n_actions))
    return qtable.greedy(s)


def q_update(
    qtable: QTable,
    s: int,
    a: int,
    r: float,
    s_next: int,
    gamma: float,
    tau: float,
    terminal: bool = False,
) -> None:
    """Temporal-difference update toward r + tau * min_a' Q(s', a')."""
    target = r if terminal else r + tau * float(np.min(qtable.q[s_next]))
    qtable.q[s, a] += gamma * (target - qtable.q[s, a])
    qtable.visits[s, a] += 1


def _plant_transition(soc, p_demand, p_en, fuel_g, pt: Powertrain, spec: MdpSpec):
    """One powertrain step at a fixed operating point.

    Returns (cost, soc_next, absorbed, violated); ``absorbed`` is True when
    the SOC left its admissible band (the step clamps it back).
    """
    p_b, p_clamped = split_power(p_demand, p_en, pt.eff, pt.battery)
    soc_next, i_b, soc_clamped = battery_step(soc, p_b, pt.battery, spec.dt)
    violated = p_clamped or soc_clamped or not (
        pt.battery.i_min <= i_b <= pt.battery.i_max
    )
    cost = (fuel_g + spec.soc_weight * (soc - spec.soc_ref) ** 2) * spec.dt
    if violated:
        cost += spec.penalty
    return cost, soc_next, soc_clamped, violated


@dataclass
class TrainResult:
    qtable: QTable
    episode_costs: np.ndarray
    epsilons: np.ndarray
    gammas: np.ndarray


def train(
    spec: MdpSpec,
    tpm: TransitionModel,
    powertrain: Powertrain,
    v_profile,
    rng: np.random.Generator,
    schedule: LearningSchedule | None = None,
    p_dem_init: float = 0.0,
    soc0: float | None = None,
    snap_soc: bool = False,
) -> TrainResult:
    """Run the episodic Q-learning loop over a speed profile.

    Each episode replays ``v_profile`` while the demand bin walks the
    transition model from the bin of ``p_dem_init``. Episodes end at the
    profile end or, unless ``snap_soc`` is set, when the SOC is absorbed at a
    band edge. With ``snap_soc`` the SOC is forced back onto the grid after
    every step and band edges clamp instead of terminating, making the walk
    an exact finite MDP (used for oracle comparisons).
    """
    if schedule is None:
        schedule = LearningSchedule()
    row_sums = tpm.probs.sum(axis=2)
    if not np.all(np.abs(row_sums - 1.0) <= 1e-9):
        raise ValueError("transition model rows must sum to 1")

    q = spec.quantizer
    m_bins, k_bins = q.power_bins, q.speed_bins
    v_profile = np.asarray(v_profile, dtype=float)
    length = len(v_profile)
    if length < 1:
        raise ValueError("speed profile must be non-empty")
    soc_start = spec.soc_ref if soc0 is None else soc0

    # Engine output depends only on (action, step), so tabulate it once.
    th_grid = spec.throttle_grid()
    n_actions = spec.n_actions
    p_en_tab = [[0.0] * length for _ in range(n_actions)]
    fuel_tab = [[0.0] * length for _ in range(n_actions)]
    for a, th in enumerate(th_grid):
        pen_row, fuel_row = p_en_tab[a], fuel_tab[a]
        for t, v in enumerate(v_profile):
            _, _, p_en, fuel = engine_output(float(th), float(v), powertrain.engine)
            pen_row[t] = p_en
            fuel_row[t] = fuel * KG_TO_G
    v_bins = [q.speed_index(float(v)) for v in v_profile]
    p_centers = q.power_centers().tolist()
    cdf_rows = [
        tpm.cdf[k, n].tolist() for k in range(k_bins) for n in range(m_bins)
    ]
    p_bin0 = q.power_index(p_dem_init)

    n_states = spec.n_states
    q_table = [[0.0] * n_actions for _ in range(n_states)]
    visit_table = [[0] * n_actions for _ in range(n_states)]

    soc_lo, soc_step = spec.soc_lo, spec.soc_step
    soc_levels_m1 = spec.soc_levels - 1
    tau = spec.discount
    episode_costs = np.empty(schedule.episodes)
    epsilons = np.empty(schedule.episodes)
    gammas = np.empty(schedule.episodes)
    plant = _plant_transition

    for ep in range(schedule.episodes):
        eps = schedule.epsilon(ep)
        gamma = schedule.gamma(ep)
        epsilons[ep] = eps
        gammas[ep] = gamma
        u_explore = rng.random(length).tolist()
        a_explore = rng.integers(0, n_actions, length).tolist()
        u_demand = rng.random(length).tolist()

        soc = soc_start
        p_bin = p_bin0
        i_soc = min(max(int((soc - soc_lo) / soc_step + 0.5), 0), soc_levels_m1)
        total = 0.0
        for t in range(length):
            k_v = v_bins[t]
            s = (i_soc * m_bins + p_bin) * k_bins + k_v
            row = q_table[s]
            if u_explore[t] < eps:
                a = a_explore[t]
            else:
                a = row.index(min(row))
            cost, soc_next, absorbed, _ = plant(
                soc, p_centers[p_bin], p_en_tab[a][t], fuel_tab[a][t],
                powertrain, spec,
            )
            total += cost
            t_next = t + 1
            end_of_profile = t_next == length
            i_next = min(max(int((soc_next - soc_lo) / soc_step + 0.5), 0),
                         soc_levels_m1)
            visit_table[s][a] += 1
            old = row[a]
            if snap_soc:
                # Continuing task on the exact grid MDP: band edges clamp and
                # the profile cutoff still bootstraps, so the fixed point is
                # the same infinite-horizon solution value iteration finds.
                soc_next = soc_lo + i_next * soc_step
                terminal = False
            else:
                terminal = absorbed or end_of_profile
            if terminal:
                row[a] = old + gamma * (cost - old)
                break
            idx = bisect_right(cdf_rows[k_v * m_bins + p_bin], u_demand[t])
            p_next = idx if idx < m_bins else m_bins - 1
            k_next = v_bins[0] if end_of_profile else v_bins[t_next]
            s_next = (i_next * m_bins + p_next) * k_bins + k_next
            next_row = q_table[s_next]
            row[a] = old + gamma * (cost + tau * min(next_row) - old)
            if end_of_profile:
                break
            soc, p_bin, i_soc = soc_next, p_next, i_next
        episode_costs[ep] = total

    return TrainResult(
        qtable=QTable(
            q=np.array(q_table),
            visits=np.array(visit_table, dtype=np.int64),
            episodes=schedule.episodes,
        ),
        episode_costs=episode_costs,
        epsilons=epsilons,
        gammas=gammas,
    )


def act(qtable: QTable, soc: float, p_dem: float, v: float, spec: MdpSpec):
    """Greedy throttle for the current state.

    Returns (throttle, cold) where ``cold`` marks a state the table never
    visited (the fallback is action 0).
    """
    s = spec.state_index(soc, p_dem, v)
    if not qtable.visits[s].any():
        return 0.0, True
    a = qtable.greedy(s)
    return float(spec.throttle_grid()[a]), False


def value_iteration(rewards: np.ndarray, transitions: np.ndarray, tau: float,
                    tol: float = 1e-9, max_iter: int = 100000):
    """Bellman iteration on explicit (S, A) reward and (S, A, S) transition tables.

    Minimization form; returns (V, policy, sup-norm history).
    """
    if not (0.0 <= tau < 1.0):
        raise ValueError("tau must be in [0, 1)")
    n_states, n_actions = rewards.shape
    flat = transitions.reshape(n_states * n_actions, n_states)
    v = np.zeros(n_states)
    history = []
    for _ in range(max_iter):
        q = rewards + tau * (flat @ v).reshape(n_states, n_actions)
        v_new = q.min(axis=1)
        delta = float(np.max(np.abs(v_new - v)))
        history.append(delta)
        v = v_new
        if delta <= tol:
            break
    q = rewards + tau * (flat @ v).reshape(n_states, n_actions)
    return v, np.argmin(q, axis=1), np.array(history)


def energy_mdp_tables(spec: MdpSpec, tpm: TransitionModel, powertrain: Powertrain,
                      speeds=None):
    """Materialize the snapped power-split MDP as explicit tables.

    States walk the SOC grid deterministically per action (level midpoint
    through the plant, re-quantized), demand bins follow the transition
    model, and the speed bin persists. Returns the stage-cost array and the
    next-SOC index array, both shaped (soc, demand, speed, action).
    """
    q = spec.quantizer
    m_bins, k_bins = q.power_bins, q.speed_bins
    soc_grid = spec.soc_grid()
    th_grid = spec.throttle_grid()
    speeds = q.speed_centers() if speeds is None else np.asarray(speeds, float)
    if len(speeds) != k_bins:
        raise ValueError("need one representative speed per speed bin")
    p_centers = q.power_centers()

    n_soc = spec.soc_levels
    rewards = np.empty((n_soc, m_bins, k_bins, spec.n_actions))
    soc_next = np.empty((n_soc, m_bins, k_bins, spec.n_actions), dtype=np.int64)
    for a, th in enumerate(th_grid):
        for k in range(k_bins):
            _, _, p_en, fuel = engine_output(float(th), float(speeds[k]),
                                             powertrain.engine)
            fuel_g = fuel * KG_TO_G
            for n in range(m_bins):
                for i, soc in enumerate(soc_grid):
                    cost, s_next, _, _ = _plant_transition(
                        float(soc), float(p_centers[n]), p_en, fuel_g,
                        powertrain, spec,
                    )
                    rewards[i, n, k, a] = cost
                    soc_next[i, n, k, a] = spec.soc_index(s_next)
    return rewards, soc_next


def value_iteration_oracle(spec: MdpSpec, tpm: TransitionModel,
                           powertrain: Powertrain, tol: float = 1e-9,
                           speeds=None, max_iter: int = 100000):
    """Bellman iteration on the snapped power-split MDP.

    The reference solver for comparing trained tables against; exploits the
    structure (deterministic SOC move, demand transition, persistent speed
    bin) instead of materializing the dense (S, A, S) tensor.
    Returns (V, policy) shaped (soc_levels, power_bins, speed_bins[, actions]).
    """
    rewards, soc_next = energy_mdp_tables(spec, tpm, powertrain, speeds)
    q = spec.quantizer
    m_bins, k_bins = q.power_bins, q.speed_bins
    tau = spec.discount
    v = np.zeros((spec.soc_levels, m_bins, k_bins))
    for _ in range(max_iter):
        q_values = np.empty(rewards.shape)
        for k in range(k_bins):
            v_k = v[:, :, k]  # (soc, demand)
            for a in range(spec.n_actions):
                gathered = v_k[soc_next[:, :, k, a], :]      # (soc, n, m)
                q_values[:, :, k, a] = rewards[:, :, k, a] + tau * np.einsum(
                    "nm,inm->in", tpm.probs[k], gathered
                )
        v_new = q_values.min(axis=3)
        delta = float(np.max(np.abs(v_new - v)))
        v = v_new
        if delta <= tol:
            break
    policy = np.argmin(q_values, axis=3)
    return v, policy


def save_qtable(qtable: QTable, spec: MdpSpec, path) -> None:
    """Persist the table plus grid metadata as an .npz archive."""
    meta = {
        "soc_levels": spec.soc_levels,
        "soc_lo": spec.soc_lo,
        "soc_hi": spec.soc_hi,
        "power_bins": spec.quantizer.power_bins,
        "power_lo": spec.quantizer.power_lo,
        "power_hi": spec.quantizer.power_hi,
        "speed_bins": spec.quantizer.speed_bins,
        "speed_lo": spec.quantizer.speed_lo,
        "speed_hi": spec.quantizer.speed_hi,
        "throttle_levels": spec.throttle_levels,
        "discount": spec.discount,
        "soc_weight": spec.soc_weight,
        "dt": spec.dt,
        "soc_ref": spec.soc_ref,
        "penalty": spec.penalty,
        "episodes": qtable.episodes,
    }
    np.savez(path, q=qtable.q, visits=qtable.visits,
             meta=np.array(json.dumps(meta)))


def load_qtable(path):
    """Load a table written by ``save_qtable``; returns (QTable, MdpSpec)."""
    data = np.load(path, allow_pickle=False)
    meta = json.loads(str(data["meta"]))
    spec = MdpSpec(
        quantizer=QuantizerSpec(
            power_bins=meta["power_bins"], power_lo=meta["power_lo"],
            power_hi=meta["power_hi"], speed_bins=meta["speed_bins"],
            speed_lo=meta["speed_lo"], speed_hi=meta["speed_hi"],
        ),
        soc_levels=meta["soc_levels"], soc_lo=meta["soc_lo"],
        soc_hi=meta["soc_hi"], throttle_levels=meta["throttle_levels"],
        discount=meta["discount"], soc_weight=meta["soc_weight"],
        dt=meta["dt"], soc_ref=meta["soc_ref"], penalty=meta["penalty"],
    )
    qtable = QTable(q=data["q"], visits=data["visits"],
                    episodes=int(meta["episodes"]))
    return qtable, spec


def save_training_curve(result: TrainResult, path) -> None:
    """Training curve as CSV: episode, cost, epsilon, gamma."""
    with open(path, "w") as fh:
        fh.write("episode,cost,epsilon,gamma\n")
        for i, c in enumerate(result.episode_costs):
            fh.write(
                f"{i},{float(c)!r},{float(result.epsilons[i])!r},"
                f"{float(result.gammas[i])!r}\n"
            )
