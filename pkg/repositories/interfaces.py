"""
Repository Interfaces

Abstract base classes defining the contract for reading run configurations
and persisting kernel, simulation and verification artefacts. The services
depend only on these interfaces, so storage formats can change without
touching the numerical pipeline.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from backstepping.feedback import FeedbackGain
from backstepping.kernel import KernelSolution, KernelTable
from backstepping.model import PlantModel, TargetSpec
from backstepping.sim import Trajectory


@dataclass
class SolverSettings:
    """Settings of the successive approximation."""
    grid_n: int = 51
    tol: float = 1e-3
    max_iter: int = 50


@dataclass
class SimSettings:
    """Settings of the method-of-lines simulation."""
    n_z: int = 102
    t_end: float = 3.0
    dt: float = 1e-3
    x0: Tuple[Any, ...] = ()


@dataclass
class ConfigDocument:
    """
    Validated run configuration.

    The plant keeps the user's state order and boundary operators; the
    target's artificial boundary functions are keyed by 0-based pairs.
    """
    plant: PlantModel
    target: TargetSpec
    solver: SolverSettings = field(default_factory=SolverSettings)
    sim: SimSettings = field(default_factory=SimSettings)
    path: Optional[str] = None


@dataclass
class KernelSamples:
    """Kernel samples reloaded from storage, NaN above the diagonal."""
    z: np.ndarray
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def matches(self, table: KernelTable) -> bool:
        """True if the samples equal the table bit for bit."""
        return (np.array_equal(self.z, table.z)
                and np.array_equal(self.values, table.values, equal_nan=True))


class IConfigRepository(ABC):
    """
    Abstract repository interface for run configurations.

    Implementations can read different document formats while handing the
    services the same validated ConfigDocument.
    """

    @abstractmethod
    def parse_config(self, path: str) -> ConfigDocument:
        """
        Read and validate a configuration document.

        Args:
            path: Location of the document

        Returns:
            ConfigDocument with every expression parsed and checked for finite values

        Raises:
            ParseError: If the document or an expression is malformed
            DimensionMismatch: If matrix sizes disagree with n
            ExpressionDomainError: If an expression is not finite on [0, 1]
            RepositoryStorageException: If the document cannot be read
        """
        pass


class IResultRepository(ABC):
    """
    Abstract repository interface for run artefacts.

    One repository instance writes into one output location; writes are
    deterministic so identical runs produce identical files.
    """

    @abstractmethod
    def save_kernel(self, solution: KernelSolution, A0_tilde: Dict[Tuple[int, int], Any],
                    meta: Dict[str, Any]) -> None:
        """
        Persist a converged kernel.

        Args:
            solution: Kernel solution (K and canonical G node values)
            A0_tilde: Target coupling per pair, in the state order of the solution
            meta: Solver summary (iterations, final update, gamma, M_hat, ...)

        Raises:
            RepositoryStorageException: If the files cannot be written
        """
        pass

    @abstractmethod
    def load_kernel(self) -> KernelSamples:
        """
        Reload the kernel samples written by save_kernel.

        Returns:
            KernelSamples with the triangle nodes and per-pair values

        Raises:
            RepositoryDataException: If the stored kernel is malformed
            RepositoryStorageException: If the file cannot be read
        """
        pass

    @abstractmethod
    def save_gain(self, gain: FeedbackGain) -> None:
        """
        Persist the boundary and kernel parts of a feedback gain.

        Raises:
            RepositoryStorageException: If the files cannot be written
        """
        pass

    @abstractmethod
    def save_trajectory(self, trajectory: Trajectory) -> None:
        """
        Persist snapshots, norms and inputs of a simulation.

        Raises:
            RepositoryStorageException: If the files cannot be written
        """
        pass

    @abstractmethod
    def save_report(self, report: Dict[str, Any]) -> None:
        """
        Persist a verification report.

        Raises:
            RepositoryStorageException: If the file cannot be written
        """
        pass

    @abstractmethod
    def save_eigenvalues(self, top_eigenvalues: Sequence[float], mu_max: float) -> None:
        """
        Persist the per-state top eigenvalues and their maximum.

        Raises:
            RepositoryStorageException: If the file cannot be written
        """
        pass


class RepositoryException(Exception):
    """Base exception for repository operations."""
    pass


class RepositoryStorageException(RepositoryException):
    """Exception raised when the storage location cannot be read or written."""
    pass


class RepositoryDataException(RepositoryException):
    """Exception raised when stored data is malformed."""
    pass
