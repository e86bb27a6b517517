"""
Verification Service

Collects the checks of a converged design into one report: kernel
residuals and trace identities, the structure of the target coupling, the
decay bound mu_max, the open-loop spectral abscissa and the decay rate
fitted to a closed-loop run.
"""

import logging
from typing import Any, Dict, List, Optional

import numpy as np

from backstepping.kernel import A0_tilde_matrix, descending_permutation
from backstepping.residuals import residual_report
from backstepping.sim import discretize, estimate_mu_max, spectral_abscissa, top_eigenvalues
from repositories.interfaces import SimSettings

from .kernel_service import KernelDesign, NormalizedPlant
from .simulation_service import SimulationService

logger = logging.getLogger(__name__)


class VerificationService:
    """
    Service layer for design verification.

    Example:
        verifier = VerificationService(SimulationService(KernelService()))
        report = verifier.verify(design, doc.sim)
    """

    def __init__(self, simulation_service: SimulationService):
        """
        Initialize the verification service.

        Args:
            simulation_service: Service used for the closed-loop run
        """
        self.simulations = simulation_service

    @staticmethod
    def mu_max(normalized: NormalizedPlant) -> float:
        return estimate_mu_max(normalized.plant, normalized.target)

    @staticmethod
    def eigenvalues(normalized: NormalizedPlant) -> List[float]:
        """Top eigenvalue per state, in the user's state order."""
        tops = top_eigenvalues(normalized.plant, normalized.target)
        inv = np.argsort(normalized.order)
        return [tops[k] for k in inv]

    @staticmethod
    def open_loop_abscissa(normalized: NormalizedPlant, settings: SimSettings) -> float:
        """Spectral abscissa of the uncontrolled physical plant on the simulation grid."""
        return spectral_abscissa(discretize(normalized.physical, settings.n_z))

    @staticmethod
    def coupling_structure_error(design: KernelDesign) -> float:
        """
        Largest entry of A0~ on or above the diagonal once the states are
        sorted by decreasing diffusion; zero for a correct design.
        """
        sol = design.solution
        z = sol.K.z
        M = A0_tilde_matrix(sol.A0_tilde, sol.plant.n, z)
        order = descending_permutation(sol.plant)
        M = M[np.ix_(order, order)]
        upper = np.triu(np.ones((sol.plant.n, sol.plant.n), dtype=bool))
        return float(np.max(np.abs(M[upper]))) if M.size else 0.0

    def verify(self, design: KernelDesign, settings: Optional[SimSettings] = None,
               seed: int = 0) -> Dict[str, Any]:
        """
        Build the verification report of a design.

        Args:
            design: Converged design
            settings: Simulation settings; the decay-rate fit and the
                open-loop norm ratio over t_end are skipped (reported as
                None) when they hold no initial profile
            seed: Seed of the random reciprocity profiles

        Returns:
            Report dictionary, ready for report.json
        """
        report: Dict[str, Any] = dict(residual_report(design.solution, seed=seed))
        report["mu_c"] = float(design.solution.target.mu_c)
        report["mu_max"] = self.mu_max(design.normalized)
        report["a0_tilde_structure_err"] = self.coupling_structure_error(design)
        report["decay_rate_fit"] = None
        report["target_crosscheck_err"] = None
        report["open_loop_growth"] = None
        report["open_loop_abscissa"] = self.open_loop_abscissa(design.normalized, settings or SimSettings())
        if settings is not None and settings.x0:
            closed = self.simulations.closed_loop(design, settings)
            report["decay_rate_fit"] = self.simulations.decay_rate(closed)
            opened = self.simulations.open_loop_physical(design.normalized.physical, settings)
            report["open_loop_growth"] = float(opened.norm_series[-1] / opened.norm_series[0])
            transformed = self.simulations.to_target(design, closed)
            target = self.simulations.target_loop(design, settings)
            scale = max(float(target.l2_norms[0]), 1e-300)
            report["target_crosscheck_err"] = float(
                np.max(np.abs(transformed.l2_norms - target.l2_norms))) / scale
        logger.info(f"Verification: mu_max = {report['mu_max']:.4g}, "
                    f"decay rate fit = {report['decay_rate_fit']}")
        return report
