"""
Simulation Service

Business logic for open- and closed-loop simulations of a plant, for the
target system of a design and for sweeps over the decay parameter mu_c.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from backstepping.exceptions import GridMismatch
from backstepping.model import PlantModel, TargetSpec
from backstepping.numerics import fit_decay_rate
from backstepping.sim import (
    Trajectory,
    discretize,
    discretize_target,
    sample_profiles,
    simulate,
    transform_trajectory,
)
from repositories.interfaces import SimSettings, SolverSettings

from .kernel_service import KernelDesign, KernelService

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SweepResult:
    """Closed-loop decay rate for one mu_c."""
    mu_c: float
    iterations: int
    decay_rate: float
    final_norm: float


class SimulationService:
    """
    Service layer for method-of-lines simulations.

    Example:
        sims = SimulationService(KernelService())
        traj = sims.closed_loop(design, doc.sim)
        rate = sims.decay_rate(traj)
    """

    def __init__(self, kernel_service: KernelService):
        """
        Initialize the simulation service.

        Args:
            kernel_service: Service used to normalize plants and build gains
        """
        self.kernels = kernel_service

    @staticmethod
    def grid_nodes(settings: SimSettings) -> np.ndarray:
        return np.linspace(0.0, 1.0, settings.n_z)

    @staticmethod
    def initial_state(settings: SimSettings, n: int) -> np.ndarray:
        """
        Initial profile sampled on the simulator grid, shape (n, n_z).

        Raises:
            GridMismatch: If the settings hold no initial profile for n states
        """
        if len(settings.x0) != n:
            raise GridMismatch(f"initial state needs {n} profiles, got {len(settings.x0)}")
        return sample_profiles(settings.x0, SimulationService.grid_nodes(settings))

    def open_loop(self, plant: PlantModel, target: TargetSpec, settings: SimSettings) -> Trajectory:
        """Simulate the plant with zero input."""
        return self.open_loop_physical(self.kernels.normalize(plant, target).physical, settings)

    def open_loop_physical(self, physical: PlantModel, settings: SimSettings) -> Trajectory:
        """Simulate an already validated plant with zero input."""
        system = discretize(physical, settings.n_z)
        x0 = self.initial_state(settings, physical.n)
        logger.info(f"Open-loop simulation to t = {settings.t_end} with dt = {settings.dt}")
        return simulate(system, x0, settings.t_end, settings.dt)

    def closed_loop(self, design: KernelDesign, settings: SimSettings) -> Trajectory:
        """Simulate the physical plant under the backstepping feedback of a design."""
        physical = design.normalized.physical
        system = discretize(physical, settings.n_z)
        gain = self.kernels.gain(design, system.z)
        x0 = self.initial_state(settings, physical.n)
        logger.info(f"Closed-loop simulation with mu_c = {design.solution.target.mu_c} "
                    f"to t = {settings.t_end} with dt = {settings.dt}")
        return simulate(system, x0, settings.t_end, settings.dt, gain=gain)

    def target_loop(self, design: KernelDesign, settings: SimSettings) -> Trajectory:
        """
        Simulate the target system from the transformed initial state.

        The trajectory is in the reordered, convection-free coordinates of
        the design, as produced by the forward transformation.
        """
        norm = design.normalized
        system = discretize_target(norm.plant, norm.target, design.solution.A0_tilde, settings.n_z)
        x0 = self.initial_state(settings, norm.plant.n)
        start = Trajectory(system.z, np.zeros(1), x0[None], np.zeros(1))
        x0_tilde = transform_trajectory(start, design.solution.K, "forward", norm.weight, norm.order).snapshots[0]
        return simulate(system, x0_tilde, settings.t_end, settings.dt)

    def to_target(self, design: KernelDesign, trajectory: Trajectory) -> Trajectory:
        """Forward transformation of a physical trajectory."""
        norm = design.normalized
        return transform_trajectory(trajectory, design.solution.K, "forward", norm.weight, norm.order)

    @staticmethod
    def decay_rate(trajectory: Trajectory) -> float:
        return fit_decay_rate(trajectory.norm_times, trajectory.norm_series)

    def sweep_mu_c(self, plant: PlantModel, target: TargetSpec, mu_values: Sequence[float],
                   solver: Optional[SolverSettings] = None, settings: Optional[SimSettings] = None,
                   max_workers: int = 1) -> Dict[float, SweepResult]:
        """
        Closed-loop decay rates for several values of mu_c.

        Each value needs its own kernel. Runs share only immutable plant
        data, so they may execute in a thread pool.
        """
        settings = settings or SimSettings()

        def run(mu: float) -> SweepResult:
            design = self.kernels.design(plant, target.with_mu_c(mu), solver)
            traj = self.closed_loop(design, settings)
            rate = self.decay_rate(traj)
            logger.info(f"mu_c = {mu}: fitted decay rate {rate:.4g}")
            return SweepResult(float(mu), design.solution.iterations_used, rate, float(traj.norm_series[-1]))

        with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
            results = list(pool.map(run, mu_values))
        return {r.mu_c: r for r in results}
