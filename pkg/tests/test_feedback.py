from dataclasses import replace

import numpy as np
import pytest

from backstepping.exceptions import GridMismatch
from backstepping.feedback import FeedbackGain, build_gain, eval_control
from backstepping.kernel import scalar_reaction_kernel
from backstepping.model import ConvectionWeight
from backstepping.numerics import GridFn1D

from .conftest import make_scalar_target


@pytest.fixture(scope="module")
def scalar_gain(scalar_solution, scalar_plant, scalar_target):
    return build_gain(scalar_solution.K, scalar_plant, scalar_target)


def test_dirichlet_target_folds_the_boundary_term_into_the_kernel(scalar_gain, scalar_solution):
    z = scalar_solution.K.z
    assert np.array_equal(scalar_gain.k_boundary, np.zeros((1, 1)))
    assert np.array_equal(scalar_gain.k_kernel[0, 0], scalar_solution.K.values[0, 0, -1, :])
    assert np.allclose(scalar_gain.k_kernel[0, 0], scalar_reaction_kernel(5.0, 1.0, z), atol=1e-2)
    assert list(scalar_gain.dirichlet_target) == [True]


def test_gain_on_another_grid(scalar_solution, scalar_plant, scalar_target):
    z = np.linspace(0.0, 1.0, 102)
    gain = build_gain(scalar_solution.K, scalar_plant, scalar_target, z)
    assert gain.k_kernel.shape == (1, 1, 102)
    assert gain.z is z or np.array_equal(gain.z, z)


def test_control_is_linear_in_the_state(scalar_gain):
    z = scalar_gain.z
    x = np.sin(np.pi * z)[None, :]
    y = (z ** 2)[None, :]
    u = eval_control(scalar_gain, 2.0 * x - 3.0 * y)
    assert np.allclose(u, 2.0 * eval_control(scalar_gain, x) - 3.0 * eval_control(scalar_gain, y))
    assert eval_control(scalar_gain, np.zeros_like(x)) == pytest.approx(0.0)


def test_control_rejects_states_on_other_grids(scalar_gain):
    with pytest.raises(GridMismatch):
        eval_control(scalar_gain, np.zeros((1, 7)))
    with pytest.raises(GridMismatch):
        eval_control(scalar_gain, np.zeros((2, scalar_gain.z.size)))


def test_robin_target_keeps_a_boundary_term(scalar_solution, scalar_plant):
    neumann = replace(scalar_plant, B1_1=np.array([1.0]), B1_0=np.array([[0.0]]))
    gain = build_gain(scalar_solution.K, neumann, make_scalar_target(right_dirichlet=False))
    # u = x'(1) = K(1, 1) x(1) + int K_z(1, .) x
    assert gain.k_boundary[0, 0] == pytest.approx(-2.5, abs=1e-3)
    assert not gain.dirichlet_target[0]


def manual_gain():
    z = np.linspace(0.0, 1.0, 5)
    k_kernel = np.arange(20, dtype=float).reshape(2, 2, 5)
    return FeedbackGain(z, np.array([[1.0, 2.0], [3.0, 4.0]]), k_kernel, np.array([True, False]))


def test_permuted_gain_acts_on_the_original_order():
    gain = manual_gain()
    swapped = gain.permuted([1, 0])
    assert np.array_equal(swapped.k_boundary, [[4.0, 3.0], [2.0, 1.0]])
    assert np.array_equal(swapped.k_kernel[0, 1], gain.k_kernel[1, 0])
    assert list(swapped.dirichlet_target) == [False, True]
    x = np.random.default_rng(0).normal(size=(2, 5))
    assert np.allclose(eval_control(swapped, x)[::-1], eval_control(gain, x[::-1]))


def test_weight_composition():
    gain = manual_gain()
    assert gain.compose_weight(ConvectionWeight()) is gain
    nodes = np.linspace(0.0, 1.0, 11)
    weight = ConvectionWeight((GridFn1D(nodes, nodes), GridFn1D(nodes, np.zeros(11))))
    composed = gain.compose_weight(weight)
    assert np.allclose(composed.k_boundary[:, 0], gain.k_boundary[:, 0] * np.e)
    assert np.array_equal(composed.k_boundary[:, 1], gain.k_boundary[:, 1])
    assert np.allclose(composed.k_kernel[:, 0], gain.k_kernel[:, 0] * np.exp(gain.z))
    assert len(gain.kernel_row(1)) == 2
