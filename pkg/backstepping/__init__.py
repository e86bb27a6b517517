"""
Backstepping Kernel Design for Coupled Parabolic PIDEs

This package holds the numerical core: plant and target models, the
coordinate atlas of the kernel equations, the successive approximation
solver, feedback gain assembly and the method-of-lines simulator. It does
no file I/O; configuration documents and result files are handled by the
repositories package.
"""

from .exceptions import (
    BacksteppingException,
    ConfigException,
    ModelException,
    NumericsException,
    SolverException,
)
from .model import (
    ConvectionWeight,
    PlantModel,
    TargetSpec,
    eliminate_convection,
    reorder_dirichlet_first,
    validate_plant,
    validate_target,
)
from .coords import CoordinateAtlas, build_atlas
from .kernel import (
    KernelSolution,
    KernelTable,
    scalar_reaction_inverse_kernel,
    scalar_reaction_kernel,
    solve_kernel,
)
from .residuals import residual_report
from .feedback import FeedbackGain, build_gain, eval_control
from .sim import (
    SemiDiscreteSystem,
    Trajectory,
    discretize,
    discretize_target,
    estimate_mu_max,
    simulate,
    transform_trajectory,
)

__all__ = [
    'BacksteppingException',
    'ConfigException',
    'ModelException',
    'NumericsException',
    'SolverException',
    'ConvectionWeight',
    'PlantModel',
    'TargetSpec',
    'eliminate_convection',
    'reorder_dirichlet_first',
    'validate_plant',
    'validate_target',
    'CoordinateAtlas',
    'build_atlas',
    'KernelSolution',
    'KernelTable',
    'scalar_reaction_inverse_kernel',
    'scalar_reaction_kernel',
    'solve_kernel',
    'residual_report',
    'FeedbackGain',
    'build_gain',
    'eval_control',
    'SemiDiscreteSystem',
    'Trajectory',
    'discretize',
    'discretize_target',
    'estimate_mu_max',
    'simulate',
    'transform_trajectory',
]
