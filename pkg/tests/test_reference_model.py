import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ftibr.plant import GridEnv, dq
from ftibr.reference_model import (
    RefModelParams,
    RefModelState,
    power_tracking_bound,
    refmodel_derivative,
)

ENV = GridEnv(dq(392.0), 2 * math.pi * 60)
PARAMS = RefModelParams(r_m=0.027, l_m=0.0367, k=10.0)


def test_derivative_example():
    # unit parameters, w = 1, e = (1, 0): -(2 e - J e) with J e = (0, -1)
    params = RefModelParams(r_m=1.0, l_m=1.0, k=1.0)
    env = GridEnv(dq(1.0), 1.0)
    d = refmodel_derivative(RefModelState(dq(1.0)), dq(0.0), params, env)
    np.testing.assert_allclose(d, [-2.0, -1.0])
    d = refmodel_derivative(RefModelState(dq(2.0)), dq(0.0), RefModelParams(1.0, 1.0, 1.0), env)
    np.testing.assert_allclose(d, [-4.0, -2.0])
    d = refmodel_derivative(RefModelState(dq(2.0, 0.0)), dq(0.0), RefModelParams(1.0, 1.0, 1.0),
                            GridEnv(dq(1.0), 0.5))
    np.testing.assert_allclose(d, [-4.0, -1.0])


def test_fixed_point():
    i_ref = dq(25.0, -3.0)
    np.testing.assert_array_equal(refmodel_derivative(RefModelState(i_ref), i_ref, PARAMS, ENV), 0)


def test_bound_halves_after_ln2_over_rate():
    params = RefModelParams(r_m=1.0, l_m=1.0, k=9.0)
    assert params.decay_rate == 10.0
    assert power_tracking_bound(1.0, 0.0, 0.0, 0.0, params, math.log(2) / 10) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        power_tracking_bound(1.0, 0.0, 0.0, 0.0, params, -1.0)


def test_invalid_params():
    with pytest.raises(ValueError):
        RefModelParams(0.0, 1.0, 1.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50))
def test_power_tracking_bound_holds(m_d, m_q, r_d, r_q):
    """Reference-model powers never leave the exponential envelope."""
    state = RefModelState(dq(m_d, m_q))
    i_ref = dq(r_d, r_q)
    v = ENV.v_g
    pq = lambda i: np.array([v @ i, v @ np.array([i[1], -i[0]])])
    target = pq(i_ref)
    p0, q0 = pq(state.i_m)
    dt = 1e-5
    f = lambda i: refmodel_derivative(RefModelState(i), i_ref, PARAMS, ENV)
    i = state.i_m
    for n in range(1, 301):
        k1 = f(i)
        k2 = f(i + 0.5 * dt * k1)
        k3 = f(i + 0.5 * dt * k2)
        k4 = f(i + dt * k3)
        i = i + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        err = np.linalg.norm(pq(i) - target)
        bound = power_tracking_bound(p0, q0, target[0], target[1], PARAMS, n * dt)
        assert err <= bound * (1 + 1e-9) + 1e-9
