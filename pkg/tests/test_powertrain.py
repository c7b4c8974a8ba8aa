import math

import numpy as np
import pytest

from greenwave.dynamics import VehicleParams
from greenwave.powertrain import (
    BatteryModel,
    Efficiencies,
    EngineModel,
    battery_step,
    engine_output,
    feasible,
    power_demand,
    split_power,
)


@pytest.fixture
def params():
    return VehicleParams()


@pytest.fixture
def engine():
    return EngineModel()


@pytest.fixture
def battery():
    return BatteryModel()


@pytest.fixture
def eff():
    return Efficiencies()


class TestPowerDemand:
    def test_zero_speed(self, params):
        assert power_demand(0.0, 2.0, params) == 0.0
        assert power_demand(0.0, -2.0, params) == 0.0

    def test_traction(self, params):
        assert power_demand(10.0, 0.5, params) == pytest.approx(6441.4875)

    def test_regen(self, params):
        assert power_demand(10.0, -1.0, params) == pytest.approx(-9308.5125)


class TestEngine:
    def test_zero_throttle_idles_when_moving(self, engine):
        torque, n, power, fuel = engine_output(0.0, 10.0, engine)
        assert torque == 0.0 and power == 0.0
        assert fuel == pytest.approx(engine.idle_rate)

    def test_zero_throttle_off_at_standstill(self, engine):
        *_, fuel = engine_output(0.0, 0.0, engine)
        assert fuel == 0.0

    def test_full_throttle_hits_peak_torque(self, engine):
        torque, n, power, fuel = engine_output(1.0, 10.0, engine)
        assert torque == pytest.approx(200.0)
        assert power == pytest.approx(200.0 * engine.shaft_speed(10.0))
        assert fuel > 0.0

    def test_willans_relation(self, engine):
        # mdot must equal P / (eta * LHV) with eta read from the same map.
        torque, n, power, fuel = engine_output(0.7, 12.0, engine)
        eta = engine.efficiency(torque, n)
        assert fuel == pytest.approx(power / (eta * engine.lhv), rel=1e-12)
        # Reference magnitude: 50 kW at eta 0.35 burns ~3.36 g/s.
        assert 50e3 / (0.35 * engine.lhv) == pytest.approx(3.3613e-3, rel=1e-3)

    def test_rated_power_respected(self, engine):
        for v in np.linspace(0.0, 25.0, 40):
            _, _, power, _ = engine_output(1.0, float(v), engine)
            assert power <= engine.power_rated + 1e-9

    def test_map_positive_and_capped(self, engine):
        assert engine.eta_grid.min() > 0.0
        assert engine.eta_grid.max() <= 0.45

    def test_fuel_monotone_in_throttle(self, engine):
        # More torque never burns less fuel, on and off the grid nodes.
        for v in (3.0, 8.0, 14.0, 20.0):
            last = -1.0
            for th in np.linspace(0.05, 1.0, 39):
                *_, fuel = engine_output(float(th), v, engine)
                assert fuel >= last - 1e-15
                last = fuel

    def test_map_export_round_trips(self, engine):
        text = engine.export_map_csv()
        lines = text.strip().split("\n")
        assert len(lines) == engine.grid_points + 1
        first = lines[1].split(",")
        assert float(first[0]) == engine.torque_grid[0]
        assert float(first[1]) == engine.eta_grid[0, 0]

    def test_throttle_validated(self, engine):
        with pytest.raises(ValueError):
            engine_output(1.2, 10.0, engine)


class TestSplitPower:
    def test_balance_point(self, eff, battery):
        p_en = 5000.0
        p_b, clamped = split_power(p_en * eff.transmission, p_en, eff, battery)
        assert p_b == pytest.approx(0.0, abs=1e-9)
        assert not clamped

    def test_discharge_branch(self, eff, battery):
        p_b, clamped = split_power(6441.4875, 5000.0, eff, battery)
        assert p_b == pytest.approx(2270.7456140350873)
        assert not clamped

    def test_charge_branch(self, eff, battery):
        p_b, clamped = split_power(-9308.5125, 0.0, eff, battery)
        assert p_b == pytest.approx(-9825.652083333334)
        assert not clamped

    def test_clamped_flag(self, eff, battery):
        p_b, clamped = split_power(80e3, 0.0, eff, battery)
        assert clamped and p_b == battery.p_max

    def test_power_balance_residual(self, eff, battery):
        # Recombining through the direction-appropriate efficiency recovers
        # the demand exactly on unclamped splits.
        rng = np.random.default_rng(11)
        for _ in range(300):
            p_dem = float(rng.uniform(-25e3, 30e3))
            p_en = float(rng.uniform(0.0, 30e3))
            p_b, clamped = split_power(p_dem, p_en, eff, battery)
            if clamped:
                continue
            eta = eff.motor if p_b >= 0.0 else 1.0 / eff.motor
            residual = abs(p_dem - (p_en + p_b * eta) * eff.transmission)
            assert residual <= 1e-9 * max(1.0, abs(p_dem))


class TestBattery:
    def test_zero_power_keeps_soc(self, battery):
        soc, i_b, clamped = battery_step(0.6, 0.0, battery, 0.5)
        assert soc == 0.6 and i_b == 0.0 and not clamped

    def test_discharge_example(self):
        # Direct evaluation of the equivalent-circuit root at the reference
        # point (V_oc 250 V, r_in 0.1 ohm, Q_b 21600 C).
        batt = BatteryModel(voc_base=250.0, voc_slope=0.0, rin_base=0.1,
                            rin_slope=0.0)
        soc, i_b, _ = battery_step(0.6, 10e3, batt, 1.0)
        assert i_b == pytest.approx(40.66133775521749)
        assert soc == pytest.approx(0.6 - 40.66133775521749 / 21600.0)

    def test_charge_example(self):
        batt = BatteryModel(voc_base=250.0, voc_slope=0.0, rin_base=0.1,
                            rin_slope=0.0)
        soc, i_b, _ = battery_step(0.6, -10e3, batt, 1.0)
        assert i_b == pytest.approx(-39.37969582276281)
        assert soc > 0.6

    def test_soc_clamped_at_bounds(self, battery):
        soc, _, clamped = battery_step(battery.soc_max, -20e3, battery, 60.0)
        assert soc == battery.soc_max and clamped

    def test_sqrt_domain_violation_aborts(self):
        batt = BatteryModel(p_max=500e3)
        with pytest.raises(ArithmeticError):
            battery_step(0.6, 400e3, batt, 0.5)

    def test_constant_soc_without_power(self, battery):
        soc = 0.63
        for _ in range(100):
            soc, _, _ = battery_step(soc, 0.0, battery, 0.5)
        assert soc == 0.63

    def test_soc_euler_first_order(self, battery):
        # Halving dt changes the endpoint linearly on a smooth power profile.
        def final_soc(dt):
            soc = 0.6
            t = 0.0
            while t < 60.0 - 1e-9:
                soc, _, _ = battery_step(soc, 8e3 * math.sin(0.1 * t), battery, dt)
                t += dt
            return soc

        ref = final_soc(0.0125)
        e1 = abs(final_soc(0.4) - ref)
        e2 = abs(final_soc(0.2) - ref)
        e3 = abs(final_soc(0.1) - ref)
        assert 1.7 < e1 / e2 < 2.4
        assert 1.7 < e2 / e3 < 2.4


class TestFeasible:
    def test_interior_point_passes(self, params, engine, battery, eff):
        assert feasible(0.5, 0.6, 10.0, 0.0, params, engine, battery, eff) == []

    def test_soc_violation(self, params, engine, battery, eff):
        assert "soc" in feasible(0.5, 0.39, 10.0, 0.0, params, engine, battery, eff)

    def test_throttle_violation(self, params, engine, battery, eff):
        assert "throttle" in feasible(1.2, 0.6, 10.0, 0.0, params, engine,
                                      battery, eff)

    def test_battery_power_violation(self, params, engine, battery, eff):
        # Hard braking at speed exceeds the charge-power envelope.
        violations = feasible(0.0, 0.6, 20.0, -3.0, params, engine, battery, eff)
        assert "battery_power" in violations
