"""
Kernel Coefficient Tables

Coefficient functions of the canonical kernel equations. Every coefficient
is available in original coordinates (z, zeta), which is how the solver
evaluates them at grid points; c5 is also available in the stretched
coordinate rho for the boundary data on the ray xi = eta.
"""

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coords import CoordinateAtlas
from .model import PlantModel, TargetSpec

logger = logging.getLogger(__name__)


def vanishes(fn: Callable, two_args: bool = False) -> bool:
    """True if a coefficient function is identically zero (symbolically or on a sample grid)."""
    flag = getattr(fn, "is_zero", None)
    if isinstance(flag, bool):
        return flag
    z = np.linspace(0.0, 1.0, 41)
    if two_args:
        Z, ZETA = np.meshgrid(z, z, indexing="ij")
        values = fn(Z, ZETA)
    else:
        values = fn(z)
    return bool(np.all(np.asarray(values) == 0))


@dataclass(frozen=True)
class CoefficientTables:
    """
    Coefficients a, c1 ... c10 of the canonical kernel equations (the
    diagonal boundary data of G is the xi integral of c10).

    Index conventions: c1, c5, c8, c9 belong to element (i, j); c2, c3, c6
    couple element (i, k) into the equation of (i, j) and are indexed
    (k, j); c4 is indexed by j and c10 by i.
    """
    plant: PlantModel
    atlas: CoordinateAtlas
    mu_c: float
    c4: np.ndarray

    # original coordinates

    def a(self, i: int, j: int, z, zeta) -> np.ndarray:
        p = self.plant
        li, lj = p.lam(i, z), p.lam(j, zeta)
        return (-0.25 * p.lam_d2(i, z) + 0.25 * p.lam_d2(j, zeta)
                + 3 * p.lam_d1(i, z) ** 2 / (16 * li) - 3 * p.lam_d1(j, zeta) ** 2 / (16 * lj))

    def c1(self, i: int, j: int, z, zeta) -> np.ndarray:
        at = self.atlas
        return self.plant.lam(j, zeta) * self.plant.F[i][j](z, zeta) / (at.psi_z(i, z) * at.psi_z(j, zeta))

    def c2(self, k: int, j: int, zeta) -> np.ndarray:
        p, at = self.plant, self.atlas
        return p.A[k][j](zeta) * p.lam(j, zeta) * at.psi_z(k, zeta) / (p.lam(k, zeta) * at.psi_z(j, zeta))

    def c3(self, k: int, j: int, zeta, zeta_bar) -> np.ndarray:
        p, at = self.plant, self.atlas
        return (p.F[k][j](zeta_bar, zeta) * p.lam(j, zeta) / at.psi_z(j, zeta)
                * at.psi_z(k, zeta_bar) / p.lam(k, zeta_bar))

    def c5(self, i: int, j: int, z) -> np.ndarray:
        return np.sqrt(self.atlas.lam0[j]) * self.plant.A0[i][j](z) / self.atlas.psi_z(i, z)

    def c6(self, k: int, j: int, zeta_bar) -> np.ndarray:
        p, at = self.plant, self.atlas
        return p.A0[k][j](zeta_bar) * np.sqrt(at.lam0[j]) * at.psi_z(k, zeta_bar) / p.lam(k, zeta_bar)

    def c8(self, i: int, j: int, z) -> np.ndarray:
        p, at = self.plant, self.atlas
        li, lj = p.lam(i, z), p.lam(j, z)
        return (at.lam0[i] * at.lam0[j] * li * lj ** 3) ** 0.25 * p.A[i][j](z) / (lj - li)

    def c9(self, i: int, j: int, xi) -> np.ndarray:
        """Boundary value of H on the lower boundary of D_ij, i != j."""
        at = self.atlas
        _, slope = at.eta_lower(i, j, xi)
        zl = at.z_lower(i, j, np.clip(xi, 0.0, at.span(i, j)))
        return self.c8(i, j, zl) * slope / (at.s[i, j] * slope - 1.0)

    def c10(self, i: int, xi) -> np.ndarray:
        """Boundary value of H on the xi axis of D_ii."""
        at = self.atlas
        z = at.phi_inv(i, 0.5 * np.asarray(xi, dtype=float))
        return -0.25 * np.sqrt(at.lam0[i]) * (self.plant.A[i][i](z) + self.mu_c)

    def h_boundary(self, i: int, j: int, xi) -> np.ndarray:
        return self.c10(i, xi) if i == j else self.c9(i, j, xi)

    # stretched coordinates

    def c5_rho(self, i: int, j: int, rho) -> np.ndarray:
        return self.c5(i, j, self.atlas.phi_inv(i, rho))


def build_coefficients(plant: PlantModel, atlas: CoordinateAtlas, target: TargetSpec) -> CoefficientTables:
    """Coefficient tables for one plant, atlas and target; c4 is evaluated once per state."""
    n = plant.n
    c4 = np.zeros(n)
    for j in range(n):
        lj0 = atlas.lam0[j]
        c4[j] = float(plant.lam_d1(j, 0.0)) / (4 * np.sqrt(lj0)) + plant.q_of(j) * np.sqrt(lj0)
    logger.debug(f"Built coefficient tables, c4 = {c4}")
    return CoefficientTables(plant, atlas, float(target.mu_c), c4)
