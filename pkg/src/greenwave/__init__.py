"""Deterministic simulator and hierarchical control stack for connected
hybrid-electric vehicles on a signalized single-lane corridor."""

from .baselines import (
    CruiseConfig,
    EnergyMpcConfig,
    cruise_control_accel,
    mpc_energy_baseline,
)
from .dynamics import VehicleParams, VehicleState, passive_accel, step_dynamics
from .markov import (
    QuantizerSpec,
    TransitionModel,
    estimate_tpm,
    load_tpm,
    quantize,
    sample_next,
    save_tpm,
)
from .mpc import (
    HorizonPlan,
    LeadPrediction,
    MpcConfig,
    MpcWeights,
    plan_step,
    schedule_weights,
    solve_horizon,
    stage_cost,
)
from .powertrain import (
    BatteryModel,
    EngineModel,
    Efficiencies,
    PowertrainState,
    battery_step,
    engine_output,
    feasible,
    power_demand,
    split_power,
)
from .qlearn import (
    LearningSchedule,
    MdpSpec,
    Powertrain,
    QTable,
    act,
    epsilon_greedy,
    q_update,
    reward,
    train,
    value_iteration,
    value_iteration_oracle,
)
from .scenario import Scenario, load_scenario, save_scenario
from .simulate import (
    Metrics,
    audit_no_collision,
    audit_power_balance,
    compare_metrics,
    prepare_training,
    run_scenario,
    soc_corrected_fuel,
)
from .spat import (
    Corridor,
    InfeasibleWindowError,
    SignalTiming,
    SpeedWindow,
    control_bounds,
    light_phase,
    next_window_index,
    target_velocity,
    velocity_window,
)
from .trace import SimTrace, read_trace_csv, write_trace_csv

__version__ = "0.1.0"
