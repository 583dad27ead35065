import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core.dsp import estimate_f0
from core.errors import DegenerateFlowError, NumericalOverflowError
from core.fold_models import (
    OneMassParams,
    TrajectorySet,
    TwoMassParams,
    integrate_one_mass,
    integrate_rk4,
    mechanical_energy,
    model_flow,
    one_mass_rhs,
    simulate_one_mass,
    simulate_two_mass,
    two_mass_flow,
    two_mass_rhs,
)
from core.phase_features import upward_crossings

small = st.floats(min_value=-0.5, max_value=0.5, allow_nan=False)


def harmonic(s):
    return np.array([s[1], -s[0]])


def test_one_mass_rhs_equilibrium_and_reduction():
    p = OneMassParams()
    np.testing.assert_array_equal(one_mass_rhs(np.zeros(4), p), 0.0)
    free = OneMassParams(alpha=0.0, beta=1e-300, delta=0.0)
    d = one_mass_rhs([0.3, -0.2, -0.1, 0.4], free)
    np.testing.assert_allclose(d, [-0.2, -0.3, 0.4, 0.1], atol=1e-12)


@given(small, small)
def test_one_mass_rhs_symmetry(x, v):
    d = one_mass_rhs([x, v, x, v], OneMassParams(alpha=0.7, beta=0.4, delta=0.0))
    assert d[1] == d[3]


def test_params_validation():
    with pytest.raises(ValueError):
        OneMassParams(beta=0.0)
    with pytest.raises(ValueError):
        OneMassParams(alpha=math.inf)
    with pytest.raises(ValueError):
        TwoMassParams(q=2.5)


def test_rk4_harmonic_period():
    n = 628
    traj = integrate_rk4(harmonic, [1.0, 0.0], 2 * np.pi / n, n)
    assert traj.states[-1, 0] == pytest.approx(1.0, abs=1e-6)


def test_rk4_fourth_order():
    errors = []
    for dt in (0.1, 0.05):
        n = int(round(10.0 / dt))
        traj = integrate_rk4(harmonic, [1.0, 0.0], dt, n)
        errors.append(np.max(np.abs(traj.states[:, 0] - np.cos(traj.times))))
    assert 12.0 <= errors[0] / errors[1] <= 20.0


def test_rk4_bookkeeping_and_overflow():
    traj = integrate_rk4(harmonic, [1.0, 0.0], 0.01, 1)
    assert traj.states.shape == (2, 2)
    with pytest.raises(ValueError):
        integrate_rk4(harmonic, [1.0, 0.0], 0.0, 10)

    with pytest.raises(NumericalOverflowError) as info:
        integrate_rk4(lambda s: s * s, [1.0], 0.1, 200)
    partial = info.value.partial
    assert isinstance(partial, TrajectorySet)
    assert np.all(np.isfinite(partial.states))
    assert partial.states.shape[0] < 201


def test_fast_path_matches_generic_integrator():
    p = OneMassParams(alpha=0.5, beta=0.3, delta=0.2)
    fast = integrate_one_mass(p, 0.01, 500)
    generic = integrate_rk4(lambda s: one_mass_rhs(s, p), p.initial_state, 0.01, 500)
    np.testing.assert_allclose(fast.states, generic.states, atol=1e-12)
    np.testing.assert_allclose(fast.times, generic.times)


def test_mirrored_folds_stay_identical():
    traj = simulate_one_mass(OneMassParams(alpha=0.6, beta=0.32, delta=0.0), 0.01, 5000)
    np.testing.assert_array_equal(traj.states[:, 0], traj.states[:, 2])
    np.testing.assert_array_equal(traj.states[:, 1], traj.states[:, 3])


@settings(max_examples=10, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.05, 1.0), st.floats(-1.0, 1.0), small, small)
def test_stable_box_never_overflows(alpha, beta, delta, x0_l, x0_r):
    p = OneMassParams(alpha=alpha, beta=beta, delta=delta, x0_l=x0_l, x0_r=x0_r)
    traj = simulate_one_mass(p, 0.01, 5000)
    assert np.all(np.isfinite(traj.states))


def test_model_flow_formula():
    still = TrajectorySet(times=np.arange(5) * 0.01, states=np.zeros((5, 4)), dt=0.01)
    flow = model_flow(still, OneMassParams())
    np.testing.assert_allclose(flow.flow, 1.0)

    closed = TrajectorySet(times=np.arange(5) * 0.01, states=np.full((5, 4), -1.0), dt=0.01)
    with pytest.raises(DegenerateFlowError):
        model_flow(closed, OneMassParams())


def test_model_flow_period_matches_portrait_cycle():
    dt = 0.01
    traj = simulate_one_mass(OneMassParams(), dt, 20000)
    u = model_flow(traj, OneMassParams()).flow[10000:]
    f = estimate_f0(u, 1.0 / dt, fmin=0.05, fmax=1.0)
    assert f is not None

    _, pos = upward_crossings(traj.states[10000:, 0])
    cycle = float(np.mean(np.diff(pos))) * dt
    assert (1.0 / f) == pytest.approx(cycle, rel=0.02)


def test_two_mass_rest_and_symmetry():
    quiet = TwoMassParams(p_s=0.0)
    np.testing.assert_array_equal(two_mass_rhs(np.zeros(8), quiet), 0.0)

    p = TwoMassParams()
    fold = [0.01, 0.002, -0.005, 0.001]
    d = two_mass_rhs(np.array(fold + fold), p)
    np.testing.assert_array_equal(d[:4], d[4:])


def test_two_mass_energy_decays_without_pressure():
    p = TwoMassParams(p_s=0.0)
    traj = simulate_two_mass(p, state0=[0.001, 0.0, 0.0005, 0.0, 0.001, 0.0, 0.0005, 0.0], dt=0.01, n_steps=5000)
    energy = mechanical_energy(traj.states, p)
    assert np.all(np.diff(energy) <= 1e-9 * energy[0])
    assert energy[-1] < energy[0]


def test_two_mass_oscillates_and_flows():
    p = TwoMassParams()
    traj = simulate_two_mass(p, state0=[0.01, 0.0, 0.01, 0.0, 0.01, 0.0, 0.01, 0.0], dt=0.01, n_steps=20000)
    assert np.all(np.isfinite(traj.states))
    flow = two_mass_flow(traj, p)
    assert flow.normalized
    assert np.max(flow.flow) == pytest.approx(1.0)
    assert np.min(flow.flow) >= 0.0
