"""
Kernel Service

Business logic for kernel design. The service brings a user plant into
the normal form the solver expects (Dirichlet states first, no
convection), solves the kernel equations and maps the resulting gain and
target coupling back to the user's state order and physical state.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from backstepping.feedback import FeedbackGain, build_gain
from backstepping.kernel import KernelSolution, solve_kernel
from backstepping.model import (
    DEFAULT_EPS_SEP,
    ConvectionWeight,
    PlantModel,
    TargetSpec,
    eliminate_convection,
    permute_plant,
    reorder_dirichlet_first,
    validate_plant,
    validate_target,
)
from backstepping.numerics import GridFn1D
from repositories.interfaces import SolverSettings

logger = logging.getLogger(__name__)

Pair = Tuple[int, int]


@dataclass(frozen=True)
class NormalizedPlant:
    """
    A user plant in the forms used downstream.

    Attributes:
        physical: Validated plant in the user's state order, convection kept
            and boundary rows aligned with their states (what is simulated)
        plant: Reordered, convection-free plant the kernel is designed for
        target: Target in the reordered state order
        order: New state k is user state order[k]
        weight: Convection weight of the reordered plant
    """
    physical: PlantModel
    plant: PlantModel
    target: TargetSpec
    order: np.ndarray
    weight: ConvectionWeight


@dataclass(frozen=True)
class KernelDesign:
    """Converged kernel together with the normalization it was computed for."""
    normalized: NormalizedPlant
    solution: KernelSolution

    @property
    def A0_tilde(self) -> Dict[Pair, GridFn1D]:
        """Target coupling in the user's state order."""
        order = self.normalized.order
        return {(int(order[i]), int(order[j])): f for (i, j), f in self.solution.A0_tilde.items()}


class KernelService:
    """
    Service layer for kernel design.

    Example:
        service = KernelService()
        design = service.design(doc.plant, doc.target, doc.solver)
        gain = service.gain(design, np.linspace(0, 1, 102))
    """

    def __init__(self, eps_sep: float = DEFAULT_EPS_SEP):
        """
        Initialize the kernel service.

        Args:
            eps_sep: Minimal admissible gap between diffusion coefficients
        """
        self.eps_sep = eps_sep

    def normalize(self, plant: PlantModel, target: TargetSpec) -> NormalizedPlant:
        """
        Validate a user plant and target and bring them into normal form.

        Raises:
            ModelException: If the plant or target violates its assumptions
        """
        reordered, order = reorder_dirichlet_first(plant)
        validated = validate_plant(reordered, self.eps_sep)
        free, weight = eliminate_convection(validated)
        normalized_target = validate_target(target.permuted(order), free)
        physical = permute_plant(validated, np.argsort(order))
        return NormalizedPlant(physical, free, normalized_target, order, weight)

    def design(self, plant: PlantModel, target: TargetSpec,
               settings: Optional[SolverSettings] = None) -> KernelDesign:
        """
        Solve the kernel equations for a user plant.

        Args:
            plant: Plant as read from a configuration
            target: Target as read from a configuration
            settings: Solver settings (defaults if omitted)

        Returns:
            KernelDesign

        Raises:
            ModelException: If the plant or target is invalid
            SolverException: If the iteration does not converge
        """
        settings = settings or SolverSettings()
        normalized = self.normalize(plant, target)
        logger.info(f"Designing kernel: n = {plant.n}, mu_c = {target.mu_c}, "
                    f"grid_n = {settings.grid_n}, tol = {settings.tol}")
        solution = solve_kernel(normalized.plant, normalized.target, grid_n=settings.grid_n,
                                tol=settings.tol, max_iter=settings.max_iter)
        return KernelDesign(normalized, solution)

    def gain(self, design: KernelDesign, z: Optional[np.ndarray] = None) -> FeedbackGain:
        """
        Feedback gain acting on the physical state in the user's order.

        Args:
            design: Converged design
            z: Quadrature nodes of the gain, normally the simulator grid

        Raises:
            MissingKernelTrace: If the kernel trace at z = 1 is incomplete
        """
        norm = design.normalized
        gain = build_gain(design.solution.K, norm.plant, norm.target, z)
        return gain.compose_weight(norm.weight).permuted(norm.order)

    @staticmethod
    def meta(design: KernelDesign) -> Dict[str, Any]:
        """Solver summary written next to the kernel."""
        sol = design.solution
        return {
            "n": sol.plant.n,
            "mu_c": sol.target.mu_c,
            "grid_n": sol.grid_n,
            "iterations": sol.iterations_used,
            "final_update_sup": sol.final_update_sup,
            "update_history": list(sol.update_history),
            "gamma": sol.atlas.gamma,
            "growth_M_hat": sol.growth_M_hat,
            "state_order": [int(k) + 1 for k in design.normalized.order],
            "convection_eliminated": not design.normalized.weight.is_identity,
        }
