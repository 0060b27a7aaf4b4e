import numpy as np
import pytest

from shrinkage_inverse import depoly
from shrinkage_inverse.errors import ValidationError
from shrinkage_inverse.types import GridFunction
from shrinkage_inverse.utils import fit_slope, gaussian_profile


@pytest.fixture
def state():
    return depoly.discrete_state(gaussian_profile(0.5, 0.25), 1.0 / 32, 1, 1.5, 1.0)


def test_discrete_state_layout():
    s = depoly.discrete_state(gaussian_profile(0.5, 0.25), 0.25, 3, 1.0, 2.0)
    assert s.c.size == 5
    assert s.i_max == 7
    np.testing.assert_allclose(s.x, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert s.L == pytest.approx(1.0)


def test_rk4_matches_poisson_solution(state):
    traj = depoly.simulate_discrete(state, 0.5, state.eps / 4)
    exact = depoly.poisson_solution(state, 0.5)
    assert traj.times[-1] == pytest.approx(0.5)
    np.testing.assert_allclose(traj.final.c, exact.c, atol=1e-6)


def test_unstable_step_is_rejected(state):
    with pytest.raises(ValidationError):
        depoly.simulate_discrete(state, 1.0, state.eps)


def test_store_every_thins_the_trajectory(state):
    traj = depoly.simulate_discrete(state, 1.0, 1.0 / 160, store_every=4)
    assert traj.times.size == 41
    np.testing.assert_allclose(np.diff(traj.times), 1.0 / 40)


def test_zeroth_moment_loses_the_smallest_size(state):
    traj = depoly.simulate_discrete(state, 0.5, state.eps / 8)
    m0 = depoly.moment_series(traj, 0)
    # dM0/dt = -b c_{i0}
    rate = np.gradient(m0.values, traj.times)
    np.testing.assert_allclose(rate[2:-2], -traj.c[2:-2, 0], atol=2e-3)
    assert np.all(np.diff(m0.values) <= 0)


def test_moment_series_accepts_state_lists(state):
    states = [state, depoly.poisson_solution(state, 0.2)]
    series = depoly.moment_series(states, 1)
    np.testing.assert_allclose(series.times, [0.0, 0.2])
    assert series.values[1] < series.values[0]


def test_first_order_solution_is_a_shift():
    x = np.linspace(0.0, 1.0, 11)
    u0 = GridFunction(0.1, x, x ** 2)
    u = depoly.first_order_solve(u0, 2.0, 0.1)
    np.testing.assert_allclose(u.values[:-3], (x[:-3] + 0.2) ** 2, atol=1e-12)
    np.testing.assert_allclose(u.values[-2:], 0.0)


def test_second_order_beats_first_order():
    eps, L, T = 1.0 / 64, 1.5, 0.25
    state0 = depoly.discrete_state(gaussian_profile(0.75, 0.15), eps, 1, L, 1.0)
    u0 = depoly.interpolant(state0)
    final = depoly.simulate_discrete(state0, T, eps / 4).final
    first = depoly.first_order_solve(u0, 1.0, T)
    second = depoly.second_order_solve(u0, 1.0, eps, L, T, nx=int(16 * L / eps), nt=400)
    on_nodes = np.interp(final.x, second.x, second.values[-1])
    err1 = depoly.discrete_norm(GridFunction(eps, final.x, final.c - first.values))
    err2 = depoly.discrete_norm(GridFunction(eps, final.x, final.c - on_nodes))
    assert err2 < 0.5 * err1
    assert second.values.shape == (401, second.x.size)
    np.testing.assert_allclose(second.values[:, -1], 0.0)


def test_crank_nicolson_rejects_coarse_grid():
    with pytest.raises(ValidationError, match='raise nx'):
        depoly.CrankNicolson(1.0, 1.0 / 16, 1.0, 1.0, nx=32, nt=10)


def test_threaded_columns_match_serial():
    stepper = depoly.CrankNicolson(1.0, 1.0 / 8, 1.0, 1.0, nx=40, nt=20)
    U = np.random.default_rng(0).random((40, 30))
    serial = stepper.propagate_columns(U, threads=1, chunk=7)
    threaded = stepper.propagate_columns(U, threads=3, chunk=7)
    np.testing.assert_allclose(threaded, serial)
    np.testing.assert_allclose(serial, stepper.propagate(U)[:, 0, :])


def test_discrete_norm():
    u = GridFunction(0.25, np.arange(4) * 0.25, [1.0, -1.0, 1.0, -1.0])
    assert depoly.discrete_norm(u) == pytest.approx(1.0)


def test_convergence_rates_in_eps():
    # smooth data kept away from both ends over the horizon
    b, L, t = 1.0, 1.0, 0.5
    epsilons = [1.0 / 64, 1.0 / 128, 1.0 / 256]
    first_errors, second_errors = [], []
    for eps in epsilons:
        state0 = depoly.discrete_state(gaussian_profile(0.7, 0.07), eps, 1, L, b)
        exact = depoly.poisson_solution(state0, t)
        u0 = depoly.interpolant(state0)
        first = depoly.first_order_solve(u0, b, t)
        nx = int(round(4 * L / eps))
        second = depoly.second_order_solve(u0, b, eps, L, t, nx=nx, nt=nx // 2)
        on_nodes = second.values[-1][::4]
        first_errors.append(depoly.discrete_norm(GridFunction(eps, exact.x, exact.c - first.values)))
        second_errors.append(depoly.discrete_norm(GridFunction(eps, exact.x, exact.c - on_nodes)))
    assert 0.8 <= fit_slope(epsilons, first_errors) <= 1.2
    assert 1.3 <= fit_slope(epsilons, second_errors)
    assert all(s < f for s, f in zip(second_errors, first_errors))
