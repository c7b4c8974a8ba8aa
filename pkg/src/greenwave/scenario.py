"""Scenario configuration: every tunable named by the simulator, with the
default eight-vehicle corridor, JSON load/save, and fleet initialization.

A scenario file is a JSON object whose sections mirror the dataclasses
below; omitted keys fall back to the defaults, so a file only needs the
values it changes. See the README for the full key listing.
"""

from dataclasses import dataclass, field, fields
import json

import numpy as np

from .baselines import CruiseConfig, EnergyMpcConfig
from .dynamics import VehicleParams, VehicleState
from .markov import QuantizerSpec
from .mpc import MpcConfig
from .powertrain import BatteryModel, EngineModel, Efficiencies
from .qlearn import LearningSchedule, MdpSpec, Powertrain
from .spat import Corridor, SignalTiming

HIGHER_CONTROLLERS = ("mpc", "cruise")
LOWER_CONTROLLERS = ("rl", "mpcbase")


def default_corridor() -> Corridor:
    """Lights every 500 m along the 5000 m corridor."""
    return Corridor(
        light_positions=tuple(float(p) for p in range(500, 5000, 500)),
        timing=SignalTiming(),
    )


@dataclass
class Scenario:
    """Complete, self-contained description of one simulation run."""

    name: str = "default"
    seed: int = 1
    n_vehicles: int = 8
    dt: float = 0.5               # s
    goal_distance: float = 5000.0 # m travelled per vehicle
    time_cap: float = 1200.0      # s
    higher: str = "mpc"           # mpc | cruise
    lower: str = "rl"             # rl | mpcbase
    init_gap: tuple = (10.0, 20.0)    # m, uniform range between neighbours
    init_speed: tuple = (10.0, 15.0)  # m/s, uniform range
    soc_init: float = 0.6
    tpm_scope: str = "per_vehicle"    # per_vehicle | fleet
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    corridor: Corridor = field(default_factory=default_corridor)
    engine: EngineModel = field(default_factory=EngineModel)
    battery: BatteryModel = field(default_factory=BatteryModel)
    efficiencies: Efficiencies = field(default_factory=Efficiencies)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    mdp: MdpSpec = field(default_factory=MdpSpec)
    schedule: LearningSchedule = field(default_factory=LearningSchedule)
    cruise: CruiseConfig = field(default_factory=CruiseConfig)
    energy_mpc: EnergyMpcConfig = field(default_factory=EnergyMpcConfig)

    def __post_init__(self):
        if self.higher not in HIGHER_CONTROLLERS:
            raise ValueError(f"higher controller must be one of {HIGHER_CONTROLLERS}")
        if self.lower not in LOWER_CONTROLLERS:
            raise ValueError(f"lower controller must be one of {LOWER_CONTROLLERS}")
        if self.tpm_scope not in ("per_vehicle", "fleet"):
            raise ValueError("tpm_scope must be 'per_vehicle' or 'fleet'")
        if self.n_vehicles < 1:
            raise ValueError("need at least one vehicle")
        if not (self.battery.soc_min <= self.soc_init <= self.battery.soc_max):
            raise ValueError("soc_init must lie inside the battery SOC band")
        self.init_gap = tuple(self.init_gap)
        self.init_speed = tuple(self.init_speed)

    @property
    def powertrain(self) -> Powertrain:
        return Powertrain(engine=self.engine, battery=self.battery,
                          eff=self.efficiencies)

    def initial_fleet(self):
        """Seeded initial states: leader at 0, followers behind at random
        gaps, random initial speeds."""
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence((self.seed, 0))))
        gaps = rng.uniform(self.init_gap[0], self.init_gap[1],
                           self.n_vehicles - 1)
        speeds = rng.uniform(self.init_speed[0], self.init_speed[1],
                             self.n_vehicles)
        positions = [0.0]
        for g in gaps:
            positions.append(positions[-1] - float(g))
        return [VehicleState(position=positions[i], velocity=float(speeds[i]))
                for i in range(self.n_vehicles)]

    def geometry_signature(self) -> dict:
        """Everything that must match between compared arms."""
        d = scenario_to_dict(self)
        for key in ("name", "higher", "lower"):
            d.pop(key)
        return d


_SECTION_TYPES = {
    "vehicle": VehicleParams,
    "corridor": Corridor,
    "engine": EngineModel,
    "battery": BatteryModel,
    "efficiencies": Efficiencies,
    "mpc": MpcConfig,
    "mdp": MdpSpec,
    "schedule": LearningSchedule,
    "cruise": CruiseConfig,
    "energy_mpc": EnergyMpcConfig,
}
_NESTED_TYPES = {
    "timing": SignalTiming,
    "quantizer": QuantizerSpec,
}


def _to_jsonable(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return {
            f.name: _to_jsonable(getattr(obj, f.name))
            for f in fields(obj) if f.init
        }
    if isinstance(obj, (tuple, list)):
        return [_to_jsonable(x) for x in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _from_section(cls, data: dict):
    merged = {}
    for f in fields(cls):
        if not f.init:
            continue
        if f.name in data:
            value = data[f.name]
            if f.name in _NESTED_TYPES and isinstance(value, dict):
                value = _from_section(_NESTED_TYPES[f.name], value)
            merged[f.name] = value
    return cls(**merged)


def scenario_to_dict(scn: Scenario) -> dict:
    return _to_jsonable(scn)


def scenario_from_dict(data: dict) -> Scenario:
    kwargs = {}
    for f in fields(Scenario):
        if f.name not in data:
            continue
        value = data[f.name]
        if f.name in _SECTION_TYPES and isinstance(value, dict):
            value = _from_section(_SECTION_TYPES[f.name], value)
        kwargs[f.name] = value
    return Scenario(**kwargs)


def save_scenario(scn: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(scn), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))
