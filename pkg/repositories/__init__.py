"""
Repository Pattern Implementation for pide-backstep

This package provides abstract repository interfaces and concrete
implementations for reading run configurations and writing run artefacts,
decoupling the numerical services from file formats.
"""

from .interfaces import (
    ConfigDocument,
    IConfigRepository,
    IResultRepository,
    KernelSamples,
    RepositoryDataException,
    RepositoryException,
    RepositoryStorageException,
    SimSettings,
    SolverSettings,
)

from .config_repository import JsonConfigRepository
from .result_repository import CsvResultRepository

__all__ = [
    'ConfigDocument',
    'IConfigRepository',
    'IResultRepository',
    'KernelSamples',
    'RepositoryDataException',
    'RepositoryException',
    'RepositoryStorageException',
    'SimSettings',
    'SolverSettings',
    'JsonConfigRepository',
    'CsvResultRepository',
]
