from dataclasses import replace

import numpy as np
import pytest

from backstepping.exceptions import (
    ActuationRowZero,
    CoupledLeftBC,
    DiffusionCoefficientsTouch,
    DiffusionNotPositive,
    DimensionMismatch,
    MalformedBC,
    TargetMismatch,
)
from backstepping.model import (
    PlantModel,
    TargetSpec,
    boundary_matrices,
    constant_fn,
    eliminate_convection,
    permute_plant,
    reorder_dirichlet_first,
    validate_plant,
    validate_target,
    zero_fn,
    zero_fn2,
)

from .conftest import make_scalar_plant, make_scalar_target


def two_state_plant(lam1=1.0, lam2=2.0, B0_1=None, B0_0=None, B1_1=(0.0, 0.0)):
    B0_1_default, B0_0_default = boundary_matrices(2, 2, [])
    return PlantModel(
        n=2,
        lambdas=(constant_fn(lam1), constant_fn(lam2)),
        A=((constant_fn(1.0), zero_fn), (zero_fn, constant_fn(1.0))),
        A0=((zero_fn, zero_fn), (zero_fn, zero_fn)),
        F=((zero_fn2, zero_fn2), (zero_fn2, zero_fn2)),
        B0_1=B0_1_default if B0_1 is None else np.asarray(B0_1, dtype=float),
        B0_0=B0_0_default if B0_0 is None else np.asarray(B0_0, dtype=float),
        B1_1=np.asarray(B1_1, dtype=float),
        B1_0=np.eye(2),
    )


def test_boundary_matrices_layout():
    B0_1, B0_0 = boundary_matrices(3, 1, [2.0, -1.0])
    assert np.array_equal(B0_1, np.diag([0.0, 1.0, 1.0]))
    assert np.array_equal(B0_0, np.diag([1.0, 2.0, -1.0]))
    with pytest.raises(DimensionMismatch):
        boundary_matrices(3, 1, [2.0])


def test_validate_plant_fills_derivatives(caplog):
    plant = validate_plant(two_state_plant())
    assert len(plant.lambda_d1) == 2
    assert abs(float(plant.lambda_d1[0](0.5))) < 1e-9
    assert plant.m == 2 and plant.p == 0
    assert "finite differences" in caplog.text


def test_non_positive_diffusion_is_rejected():
    with pytest.raises(DiffusionNotPositive):
        make_scalar_plant(lam=-1.0)


@pytest.mark.parametrize("lam2", [1.0, 1.0 + 1e-9])
def test_touching_diffusion_coefficients_are_rejected(lam2):
    with pytest.raises(DiffusionCoefficientsTouch):
        validate_plant(two_state_plant(lam2=lam2))


def test_crossing_diffusion_coefficients_are_rejected():
    plant = replace(two_state_plant(), lambdas=(constant_fn(1.0), lambda z: 0.5 + np.asarray(z, dtype=float)))
    with pytest.raises(DiffusionCoefficientsTouch):
        validate_plant(plant)


def test_silent_input_channel_is_rejected():
    plant = replace(make_scalar_plant(validate=False), B1_0=np.zeros((1, 1)))
    with pytest.raises(ActuationRowZero):
        validate_plant(plant)


def test_robin_rows_before_dirichlet_rows_are_malformed():
    B0_1, B0_0 = np.diag([1.0, 0.0]), np.eye(2)
    with pytest.raises(MalformedBC):
        validate_plant(two_state_plant(B0_1=B0_1, B0_0=B0_0))


def test_reorder_dirichlet_first_normalizes_rows():
    # state 1: 2 x' + 4 x = 0 (Robin, q = 2); state 2: 3 x = 0 (Dirichlet)
    raw = two_state_plant(lam1=1.0, lam2=2.0, B0_1=np.diag([2.0, 0.0]), B0_0=np.diag([4.0, 3.0]))
    plant, perm = reorder_dirichlet_first(raw)
    assert list(perm) == [1, 0]
    assert plant.m == 1
    assert np.array_equal(plant.B0_1, np.diag([0.0, 1.0]))
    assert np.array_equal(plant.B0_0, np.diag([1.0, 2.0]))
    assert float(plant.lam(0, 0.3)) == 2.0
    validate_plant(plant)


def test_reorder_rejects_coupled_and_duplicate_rows():
    with pytest.raises(CoupledLeftBC):
        reorder_dirichlet_first(two_state_plant(B0_1=np.zeros((2, 2)), B0_0=[[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(MalformedBC):
        reorder_dirichlet_first(two_state_plant(B0_1=np.zeros((2, 2)), B0_0=[[1.0, 0.0], [2.0, 0.0]]))
    with pytest.raises(MalformedBC):
        reorder_dirichlet_first(two_state_plant(B0_1=np.zeros((2, 2)), B0_0=[[1.0, 0.0], [0.0, 0.0]]))


def test_permute_plant_moves_every_coefficient():
    plant = replace(two_state_plant(), A=((constant_fn(1.0), constant_fn(2.0)), (constant_fn(3.0), constant_fn(4.0))))
    swapped = permute_plant(plant, [1, 0])
    assert np.allclose(swapped.matrix(swapped.A, 0.5), [[4.0, 3.0], [2.0, 1.0]])
    assert float(swapped.lam(0, 0.5)) == 2.0


def test_convection_elimination_shifts_reaction_and_robin_coefficient():
    B0_1, B0_0 = boundary_matrices(1, 0, [0.0])
    raw = replace(make_scalar_plant(c=0.0, validate=False), B0_1=B0_1, B0_0=B0_0, phi_conv=(constant_fn(2.0),))
    plant, weight = eliminate_convection(validate_plant(raw))
    z = np.linspace(0.0, 1.0, 7)
    # -phi^2 / (4 lambda) with phi = 2, lambda = 1
    assert np.allclose(plant.matrix(plant.A, z)[0, 0], -1.0, atol=1e-6)
    # q - phi(0) / (2 lambda(0))
    assert plant.B0_0[0, 0] == pytest.approx(-1.0)
    assert np.allclose(weight.diag(1, z)[0], np.exp(z), rtol=1e-6)
    assert not plant.has_convection


def test_plants_without_convection_keep_the_identity_weight(scalar_plant):
    plant, weight = eliminate_convection(scalar_plant)
    assert plant is scalar_plant
    assert weight.is_identity
    assert np.array_equal(weight.diag(1, np.zeros(3)), np.ones((1, 3)))


def test_target_type_must_match_actuation(scalar_plant):
    with pytest.raises(TargetMismatch):
        validate_target(make_scalar_target(right_dirichlet=False), scalar_plant)
    with pytest.raises(TargetMismatch):
        validate_target(TargetSpec(0.0, np.array([0.0]), np.array([0.0])), scalar_plant)
    with pytest.raises(DimensionMismatch):
        validate_target(TargetSpec(0.0, np.zeros(2), np.ones(2)), scalar_plant)


def test_artificial_boundary_functions_only_for_slower_rows():
    plant = validate_plant(two_state_plant(lam1=1.0, lam2=2.0))
    target = TargetSpec(1.0, np.zeros(2), np.ones(2), g_f={(0, 1): zero_fn})
    assert validate_target(target, plant).g_f.keys() == {(0, 1)}
    with pytest.raises(TargetMismatch):
        validate_target(replace(target, g_f={(1, 0): zero_fn}), plant)


def test_target_permutation_and_ratio():
    target = TargetSpec(2.0, np.array([1.0, 0.0]), np.array([3.0, 1.0]), g_f={(0, 1): zero_fn})
    swapped = target.permuted([1, 0])
    assert np.array_equal(swapped.Bt1_1, [0.0, 1.0])
    assert swapped.g_f.keys() == {(1, 0)}
    assert np.array_equal(target.ratio(), [3.0, 0.0])
    assert np.array_equal(target.dirichlet_target, [False, True])
    assert target.with_mu_c(5).mu_c == 5.0
