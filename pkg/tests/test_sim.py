import math

import numpy as np
import pytest

from backstepping.exceptions import GridTooCoarse
from backstepping.feedback import build_gain
from backstepping.kernel import solve_kernel
from backstepping.numerics import fit_decay_rate
from backstepping.sim import (
    Trajectory,
    discretize,
    discretize_target,
    estimate_mu_max,
    l2_norm,
    resample_kernel,
    simulate,
    top_eigenvalues,
    transform_trajectory,
)

from .conftest import make_scalar_plant, make_scalar_target

PI2 = math.pi ** 2


@pytest.fixture(scope="module")
def heat():
    return make_scalar_plant(c=0.0)


def sine_state(z):
    return np.sin(np.pi * z)[None, :]


def test_dirichlet_heat_operator_top_eigenvalue(heat):
    assert estimate_mu_max(heat, make_scalar_target()) == pytest.approx(-PI2, rel=1e-2)


def test_neumann_right_end_top_eigenvalue(heat):
    tops = top_eigenvalues(heat, make_scalar_target(right_dirichlet=False))
    assert tops[0] == pytest.approx(-PI2 / 4, rel=1e-2)


def test_slower_diffusion_moves_the_eigenvalue():
    slow = make_scalar_plant(c=0.0, lam=0.25)
    assert estimate_mu_max(slow, make_scalar_target()) == pytest.approx(-PI2 / 4, rel=1e-2)


def test_coarse_grids_are_rejected(heat):
    with pytest.raises(GridTooCoarse):
        discretize(heat, 10)
    with pytest.raises(GridTooCoarse):
        top_eigenvalues(heat, make_scalar_target(), n_nodes=5)
    with pytest.raises(GridTooCoarse):
        discretize_target(heat, make_scalar_target(), {}, 8)


def test_discretization_layout(heat):
    system = discretize(heat, 21)
    assert system.operator.shape == (21, 21)
    assert system.algebraic[0] and system.algebraic[-1]
    assert not np.any(system.algebraic[1:-1])
    assert system.inputs[-1, 0] == 1.0
    eig = np.linalg.eigvals(system.interior_operator())
    assert np.max(eig.real) == pytest.approx(-PI2, rel=2e-2)


def test_open_loop_heat_decays_at_the_first_eigenvalue(heat):
    system = discretize(heat, 102)
    traj = simulate(system, sine_state(system.z), t_end=1.0, dt=1e-3)
    assert traj.norm_series[0] == pytest.approx(math.sqrt(0.5), rel=1e-3)
    assert fit_decay_rate(traj.norm_times, traj.norm_series) == pytest.approx(PI2, rel=2e-2)
    assert np.all(traj.controls == 0.0)


def test_trajectory_bookkeeping(heat):
    system = discretize(heat, 51)
    traj = simulate(system, sine_state(system.z), t_end=0.1, dt=1e-2, save_every=3)
    assert len(traj.norm_times) == 11
    assert list(np.round(traj.times, 12)) == [0.0, 0.03, 0.06, 0.09, 0.1]
    assert traj.snapshots.shape == (5, 1, 51)
    assert traj.controls.shape == (11, 1)
    assert traj.l2_norms[0] == pytest.approx(l2_norm(system.z, traj.snapshots[0]))
    # boundary rows hold at every step
    assert np.allclose(traj.snapshots[:, 0, 0], 0.0)
    assert np.allclose(traj.snapshots[:, 0, -1], 0.0)


def test_closed_loop_reaches_the_target_decay(scalar_solution, scalar_plant, scalar_target):
    system = discretize(scalar_plant, 102)
    gain = build_gain(scalar_solution.K, scalar_plant, scalar_target, system.z)
    closed = simulate(system, sine_state(system.z), t_end=1.0, dt=1e-3, gain=gain)
    opened = simulate(system, sine_state(system.z), t_end=1.0, dt=1e-3)
    closed_rate = fit_decay_rate(closed.norm_times, closed.norm_series)
    assert closed_rate == pytest.approx(PI2, rel=0.15)
    assert closed_rate > fit_decay_rate(opened.norm_times, opened.norm_series)


def test_unstable_plant_is_stabilized():
    plant = make_scalar_plant(c=15.0)
    target = make_scalar_target()
    sol = solve_kernel(plant, target, grid_n=41, tol=1e-8, max_iter=100)
    system = discretize(plant, 82)
    x0 = sine_state(system.z)
    opened = simulate(system, x0, t_end=1.0, dt=1e-3)
    closed = simulate(system, x0, t_end=1.0, dt=1e-3, gain=build_gain(sol.K, plant, target, system.z))
    assert opened.norm_series[-1] > opened.norm_series[0]
    assert closed.norm_series[-1] < 0.1 * closed.norm_series[0]


def test_target_system_decays_with_mu_c(heat):
    target = make_scalar_target(mu_c=3.0)
    system = discretize_target(heat, target, {}, 102)
    traj = simulate(system, sine_state(system.z), t_end=1.0, dt=1e-3)
    assert fit_decay_rate(traj.norm_times, traj.norm_series) == pytest.approx(PI2 + 3.0, rel=2e-2)


def test_forward_then_inverse_transform_round_trip(scalar_solution):
    z = np.linspace(0.0, 1.0, 102)
    x = np.stack([np.sin(np.pi * z) + 0.3 * z ** 2])
    traj = Trajectory(z, np.zeros(1), x[None], np.array([l2_norm(z, x)]))
    forward = transform_trajectory(traj, scalar_solution.K, "forward")
    back = transform_trajectory(forward, scalar_solution.L, "inverse")
    assert not np.allclose(forward.snapshots[0], x)
    assert np.max(np.abs(back.snapshots[0] - x)) < 1e-2
    with pytest.raises(ValueError):
        transform_trajectory(traj, scalar_solution.K, "sideways")


def test_resampled_kernel_is_zero_above_the_diagonal(scalar_solution):
    z = np.linspace(0.0, 1.0, 31)
    T = resample_kernel(scalar_solution.K, z)
    assert T.shape == (1, 1, 31, 31)
    assert np.all(np.triu(T[0, 0], k=1) == 0.0)
    assert T[0, 0, -1, -1] == pytest.approx(-2.5, abs=1e-3)
