import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ftibr.errors import FaultedPlant
from ftibr.plant import (
    J,
    FaultMode,
    GridEnv,
    LineParams,
    PlantState,
    apply_swell,
    dq,
    inject_fault,
    measure_powers,
    plant_derivative,
)

W60 = 2 * math.pi * 60
LINE = LineParams.from_nominal(0.027, 0.0367)
ENV = GridEnv(dq(392.0), W60)
finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_derivative_hand_computed():
    # i = (1, 0), v = v_g: di_d = -r/l, di_q = -w
    d = plant_derivative(PlantState(dq(1.0)), ENV.v_g, LINE, ENV)
    assert d[0] == pytest.approx(-0.027 / 0.0367)
    assert d[0] == pytest.approx(-0.7357, abs=1e-4)
    assert d[1] == pytest.approx(-W60)
    assert d[1] == pytest.approx(-376.99, abs=1e-2)


def test_derivative_voltage_drive():
    d = plant_derivative(PlantState(), ENV.v_g + dq(0.0367, 0.0), LINE, ENV)
    np.testing.assert_allclose(d, [1.0, 0.0])


def test_powers():
    assert measure_powers(PlantState(dq(10.0)), ENV) == pytest.approx((3920.0, 0.0))
    p, q = measure_powers(PlantState(dq(0.0, 10.0)), ENV)
    assert p == pytest.approx(0.0)
    assert q == pytest.approx(3920.0)


def test_j_identities():
    np.testing.assert_array_equal(J @ J, -np.eye(2))
    np.testing.assert_array_equal(J.T, -J)
    np.testing.assert_array_equal(J @ dq(1.0, 2.0), dq(2.0, -1.0))


@settings(max_examples=200)
@given(finite, finite, st.floats(1, 1e3), st.floats(-1e3, 1e3))
def test_apparent_power_identity(i_d, i_q, v_d, v_q):
    env = GridEnv(dq(v_d, v_q), W60)
    i = dq(i_d, i_q)
    p, q = measure_powers(PlantState(i), env)
    assert math.hypot(p, q) == pytest.approx(np.linalg.norm(env.v_g) * np.linalg.norm(i),
                                             rel=1e-9, abs=1e-9)


def test_fault_clamps_and_is_idempotent():
    s = inject_fault(PlantState(dq(3.0, 4.0)), FaultMode.OPEN_LINE)
    np.testing.assert_array_equal(s.i, [0.0, 0.0])
    assert s.faulted
    assert inject_fault(s, FaultMode.OPEN_LINE) is s
    assert measure_powers(s, ENV) == (0.0, 0.0)
    with pytest.raises(FaultedPlant):
        plant_derivative(s, ENV.v_g, LINE, ENV)
    with pytest.raises(ValueError):
        inject_fault(s, FaultMode.NONE)


def test_swell():
    assert apply_swell(ENV, 0.1).v_g[0] == pytest.approx(431.2)
    assert apply_swell(ENV, -0.1).v_g[0] == pytest.approx(352.8)
    assert apply_swell(ENV, 0.1).omega_g == ENV.omega_g
    with pytest.raises(ValueError):
        apply_swell(ENV, -1.0)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        LineParams(0.0, 0.1, 0.1)
    with pytest.raises(ValueError):
        GridEnv(dq(0.0), W60)
    assert LineParams.from_nominal(0.1, 0.03, 0.01).delta_l_g == pytest.approx(0.01)


def _rk4(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


@settings(max_examples=25, deadline=None)
@given(finite, finite)
def test_homogeneous_decay(i_d, i_q):
    """With v = v_g the current spirals in: |i(t)| = |i(0)| exp(-r t / l)."""
    f = lambda i: plant_derivative(PlantState(i), ENV.v_g, LINE, ENV)
    i = dq(i_d, i_q)
    n0 = np.linalg.norm(i)
    dt, prev = 1e-5, n0
    for _ in range(200):
        i = _rk4(f, i, dt)
        n = np.linalg.norm(i)
        assert n <= prev + 1e-12
        prev = n
    assert prev == pytest.approx(n0 * math.exp(-LINE.r_g / LINE.l_g * 200 * dt), rel=1e-9, abs=1e-12)
