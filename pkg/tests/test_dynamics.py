import math

import numpy as np
import pytest

from greenwave.dynamics import VehicleParams, VehicleState, passive_accel, step_dynamics


@pytest.fixture
def params():
    return VehicleParams()


def test_passive_accel_at_20(params):
    # Direct evaluation of the drag/rolling terms with the default constants.
    assert passive_accel(params, 20.0) == pytest.approx(-0.241155, abs=1e-9)


def test_passive_accel_at_10(params):
    assert passive_accel(params, 10.0) == pytest.approx(-0.11914875, abs=1e-9)


def test_passive_accel_vanishes_without_resistances():
    p = VehicleParams(rolling_coeff=0.0)
    assert passive_accel(p, 0.0) == 0.0


def test_step_example(params):
    st = step_dynamics(VehicleState(0.0, 10.0), params, u=0.5, dt=0.5)
    assert st.position == pytest.approx(5.0)
    assert st.velocity == pytest.approx(10.190425625, abs=1e-9)
    assert st.time == pytest.approx(0.5)


def test_rest_stays_at_rest(params):
    st = step_dynamics(VehicleState(0.0, 0.0), params, u=0.0, dt=0.5)
    assert st.velocity == 0.0
    assert st.position == 0.0


def test_braking_clamps_at_zero(params):
    st = step_dynamics(VehicleState(0.0, 1.0), params, u=params.u_min, dt=0.5)
    assert st.velocity == 0.0


def test_rejects_non_finite(params):
    with pytest.raises(ValueError):
        step_dynamics(VehicleState(0.0, 5.0), params, u=math.nan, dt=0.5)


def test_invalid_params_rejected():
    with pytest.raises(ValueError):
        VehicleParams(mass=-1.0)
    with pytest.raises(ValueError):
        VehicleParams(u_min=0.5)
    with pytest.raises(ValueError):
        VehicleState(0.0, -1.0)


def test_velocity_never_negative_under_admissible_controls(params):
    rng = np.random.default_rng(7)
    for _ in range(200):
        st = VehicleState(0.0, float(rng.uniform(0.0, 25.0)))
        u = float(rng.uniform(params.u_min, params.u_max))
        nxt = step_dynamics(st, params, u, 0.5)
        assert nxt.velocity >= 0.0
        assert math.isfinite(nxt.velocity) and math.isfinite(nxt.position)


def test_coasting_velocity_strictly_decreasing(params):
    st = VehicleState(0.0, 15.0)
    for _ in range(60):
        nxt = step_dynamics(st, params, 0.0, 0.5)
        if st.velocity > 0.0:
            assert nxt.velocity < st.velocity
        st = nxt


def _integrate(params, v0, dt, horizon, u):
    st = VehicleState(0.0, v0)
    for _ in range(int(round(horizon / dt))):
        st = step_dynamics(st, params, u, dt)
    return st.velocity


def test_euler_first_order_convergence(params):
    # Halving dt over a 10 s coasting horizon shrinks the error linearly.
    ref = _integrate(params, 15.0, 1.0 / 1024.0, 10.0, 0.0)
    errs = [abs(_integrate(params, 15.0, dt, 10.0, 0.0) - ref)
            for dt in (0.5, 0.25, 0.125)]
    assert 0.9 < math.log2(errs[0] / errs[1]) < 1.1
    assert 0.9 < math.log2(errs[1] / errs[2]) < 1.1


def test_euler_local_consistency_second_order(params):
    # One full step vs two half steps differ at O(dt^2): ratio ~4 per halving.
    def local_diff(dt):
        one = step_dynamics(VehicleState(0.0, 12.0), params, 0.5, dt)
        half = step_dynamics(
            step_dynamics(VehicleState(0.0, 12.0), params, 0.5, dt / 2),
            params, 0.5, dt / 2)
        return abs(one.velocity - half.velocity)

    d = [local_diff(dt) for dt in (0.5, 0.25, 0.125)]
    assert 3.5 < d[0] / d[1] < 4.5
    assert 3.5 < d[1] / d[2] < 4.5
