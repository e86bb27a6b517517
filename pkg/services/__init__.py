"""
Service Layer for pide-backstep

This package provides the services that orchestrate the numerical core and
the repositories: kernel design, simulations and verification. Services sit
between the command-line layer and the data access layer.
"""

from .kernel_service import KernelDesign, KernelService, NormalizedPlant
from .simulation_service import SimulationService, SweepResult
from .verification_service import VerificationService

__all__ = [
    'KernelDesign',
    'KernelService',
    'NormalizedPlant',
    'SimulationService',
    'SweepResult',
    'VerificationService',
]
