"""Shared fixtures: the two-state example, the scalar reaction plant and solved kernels."""

import os

import numpy as np
import pytest

from backstepping.kernel import solve_kernel
from backstepping.model import (
    PlantModel,
    TargetSpec,
    boundary_matrices,
    constant_fn,
    zero_fn,
    zero_fn2,
    validate_plant,
    validate_target,
)
from repositories.config_repository import JsonConfigRepository
from services.kernel_service import KernelService

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")
COUPLED_CONFIG = os.path.join(CONFIGS, "coupled_example.json")
SCALAR_CONFIG = os.path.join(CONFIGS, "scalar_bessel.json")


def make_scalar_plant(c: float = 5.0, lam: float = 1.0, right_dirichlet: bool = True,
                      validate: bool = True) -> PlantModel:
    """x_t = lam x_zz + c x, x(0) = 0, actuated at z = 1."""
    B0_1, B0_0 = boundary_matrices(1, 1, [])
    plant = PlantModel(
        n=1,
        lambdas=(constant_fn(lam),),
        A=((constant_fn(c),),),
        A0=((zero_fn,),),
        F=((zero_fn2,),),
        B0_1=B0_1,
        B0_0=B0_0,
        B1_1=np.array([0.0 if right_dirichlet else 1.0]),
        B1_0=np.array([[1.0 if right_dirichlet else 0.0]]),
        lambda_d1=(zero_fn,),
        lambda_d2=(zero_fn,),
    )
    return validate_plant(plant) if validate else plant


def make_scalar_target(mu_c: float = 0.0, right_dirichlet: bool = True) -> TargetSpec:
    return TargetSpec(mu_c, np.array([0.0 if right_dirichlet else 1.0]),
                      np.array([1.0 if right_dirichlet else 0.0]))


@pytest.fixture(scope="session")
def config_repository():
    return JsonConfigRepository()


@pytest.fixture(scope="session")
def coupled_doc(config_repository):
    return config_repository.parse_config(COUPLED_CONFIG)


@pytest.fixture(scope="session")
def scalar_doc(config_repository):
    return config_repository.parse_config(SCALAR_CONFIG)


@pytest.fixture(scope="session")
def coupled_normalized(coupled_doc):
    return KernelService().normalize(coupled_doc.plant, coupled_doc.target)


@pytest.fixture(scope="session")
def coupled_design(coupled_doc):
    return KernelService().design(coupled_doc.plant, coupled_doc.target, coupled_doc.solver)


@pytest.fixture(scope="session")
def scalar_plant():
    return make_scalar_plant()


@pytest.fixture(scope="session")
def scalar_target(scalar_plant):
    return validate_target(make_scalar_target(), scalar_plant)


@pytest.fixture(scope="session")
def scalar_solution(scalar_plant, scalar_target):
    return solve_kernel(scalar_plant, scalar_target, grid_n=51, tol=1e-8, max_iter=100)


@pytest.fixture(scope="session")
def scalar_design(scalar_doc):
    return KernelService().design(scalar_doc.plant, scalar_doc.target, scalar_doc.solver)


@pytest.fixture(scope="session")
def scalar_solution_fine(scalar_plant, scalar_target):
    return solve_kernel(scalar_plant, scalar_target, grid_n=101, tol=1e-8, max_iter=100)


@pytest.fixture(scope="session")
def coupled_refined(coupled_normalized):
    """The two-state kernel at 51 and 101 nodes, both solved well below the shipped tolerance."""
    n = coupled_normalized
    return tuple(solve_kernel(n.plant, n.target, grid_n=grid_n, tol=1e-6, max_iter=100) for grid_n in (51, 101))
