"""
Coordinate Atlas

Maps between the original kernel coordinates (z, zeta), the stretched
coordinates (rho, sigma) = (phi_i(z), phi_j(zeta)) and the canonical
characteristic coordinates (xi, eta) of every kernel element, plus the
geometry of each canonical domain: the lower boundary eta_l(xi), the left
boundary xi_l(eta) and the uniform node grids the kernel is solved on.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.ndimage import distance_transform_edt
from scipy.sparse import coo_matrix, csr_matrix

from .exceptions import OutOfRange, OutsideDomain
from .model import Pair, PlantModel
from .numerics import GridFn1D, PiecewiseGridFn2D, extension_operator, interp1, invert_monotone

logger = logging.getLogger(__name__)

GHOST_LAYERS = 3
GEOM_TOL = 1e-9


@dataclass(frozen=True)
class CoordinateAtlas:
    """
    Coordinate maps of all kernel elements of one plant.

    Attributes:
        plant: Validated, convection-free plant the atlas was built from
        phi: phi_i(z) = int_0^z lambda_i^(-1/2), tabulated
        phi1: phi_i(1)
        s: +1 where lambda_i >= lambda_j, -1 otherwise
        beta: beta_ij(z) = phi_i(z) + phi_j(z), tabulated
        gap: -s_ij (phi_i(z) - phi_j(z)), increasing in z for i != j
        z_delta: argmin |lambda_i - lambda_j| per pair
        z_sigma: argmin (lambda_i + lambda_j) per pair
        gamma: Growth-envelope constant
    """
    plant: PlantModel
    phi: Tuple[GridFn1D, ...]
    phi1: np.ndarray
    lam0: np.ndarray
    s: np.ndarray
    beta: Dict[Pair, GridFn1D]
    gap: Dict[Pair, GridFn1D]
    z_delta: Dict[Pair, float]
    z_sigma: Dict[Pair, float]
    gamma: float

    @property
    def n(self) -> int:
        return self.plant.n

    def span(self, i: int, j: int) -> float:
        """Width c = phi_i(1) + phi_j(1) of the canonical domain in xi."""
        return float(self.phi1[i] + self.phi1[j])

    def bounds(self, i: int, j: int) -> Tuple[float, float]:
        """(a, b): top of the domain and lowest eta of the lower boundary."""
        if self.s[i, j] > 0:
            return float(self.phi1[i]), float(self.phi1[i] - self.phi1[j])
        return float(self.phi1[j]), float(self.phi1[j] - self.phi1[i])

    # stretched coordinates

    def rho(self, i: int, z) -> np.ndarray:
        return interp1(self.phi[i], z)

    def phi_inv(self, i: int, rho) -> np.ndarray:
        rho = np.clip(np.asarray(rho, dtype=float), 0.0, self.phi1[i])
        return invert_monotone(self.phi[i], rho)

    def psi_z(self, i: int, z) -> np.ndarray:
        """psi_i at phi_i(z): (lambda_i(z) / lambda_i(0))^(1/4)."""
        return (self.plant.lam(i, z) / self.lam0[i]) ** 0.25

    # canonical coordinates

    def to_canonical(self, i: int, j: int, z, zeta) -> Tuple[np.ndarray, np.ndarray]:
        """
        Canonical coordinates of original points 0 <= zeta <= z <= 1.

        Raises:
            OutOfRange: If a point is outside the original triangle
        """
        z = np.asarray(z, dtype=float)
        zeta = np.asarray(zeta, dtype=float)
        if (np.any(zeta < -GEOM_TOL) or np.any(z > 1 + GEOM_TOL) or np.any(zeta > z + GEOM_TOL)
                or np.any(np.isnan(z)) or np.any(np.isnan(zeta))):
            raise OutOfRange("original point outside 0 <= zeta <= z <= 1")
        s = self.s[i, j]
        ri = interp1(self.phi[i], np.clip(z, 0.0, 1.0))
        sj = interp1(self.phi[j], np.clip(zeta, 0.0, 1.0))
        xi = 0.5 * (1 - s) * self.span(i, j) + s * (ri + sj)
        eta = -0.5 * (1 - s) * (self.phi1[i] - self.phi1[j]) + ri - sj
        return xi, eta

    def from_canonical(self, i: int, j: int, xi, eta, check: bool = True) -> Tuple[np.ndarray, np.ndarray]:
        """
        Original coordinates of canonical points of D_ij.

        Raises:
            OutsideDomain: If a point lies outside D_ij
        """
        xi = np.asarray(xi, dtype=float)
        eta = np.asarray(eta, dtype=float)
        if check and not np.all(self.contains(i, j, xi, eta)):
            raise OutsideDomain(f"canonical point outside the domain of element ({i + 1}, {j + 1})")
        s = self.s[i, j]
        z = self.phi_inv(i, 0.5 * (s * xi + eta) + 0.5 * (1 - s) * self.phi1[i])
        zeta = self.phi_inv(j, 0.5 * (s * xi - eta) + 0.5 * (1 - s) * self.phi1[j])
        return z, zeta

    def cross_canonical(self, i: int, j: int, k: int, l: int, xi, eta) -> Tuple[np.ndarray, np.ndarray]:
        """Canonical coordinates in D_kl of a point given in D_ij."""
        if (i, j) == (k, l):
            return np.asarray(xi, dtype=float), np.asarray(eta, dtype=float)
        z, zeta = self.from_canonical(i, j, xi, eta)
        return self.to_canonical(k, l, z, np.minimum(zeta, z))

    # domain geometry

    def eta_lower(self, i: int, j: int, xi) -> Tuple[np.ndarray, np.ndarray]:
        """
        Lower boundary eta_l(xi) of D_ij and its slope.

        Raises:
            OutOfRange: If xi is outside [0, phi_i(1) + phi_j(1)]
        """
        xi = np.asarray(xi, dtype=float)
        c = self.span(i, j)
        if np.any(xi < -GEOM_TOL * max(1.0, c)) or np.any(xi > c * (1 + GEOM_TOL) + GEOM_TOL):
            raise OutOfRange(f"xi outside [0, {c}]")
        if i == j:
            return np.zeros_like(xi), np.zeros_like(xi)
        s = self.s[i, j]
        zl = self.z_lower(i, j, np.clip(xi, 0.0, c))
        eta = (-0.5 * (1 - s) * (self.phi1[i] - self.phi1[j])
               + interp1(self.phi[i], zl) - interp1(self.phi[j], zl))
        ri = np.sqrt(self.plant.lam(i, zl))
        rj = np.sqrt(self.plant.lam(j, zl))
        slope = s * (rj - ri) / (rj + ri)
        return eta, slope

    def z_lower(self, i: int, j: int, xi) -> np.ndarray:
        """Original diagonal point z_l(xi) on the lower boundary of D_ij."""
        s = self.s[i, j]
        target = s * np.asarray(xi, dtype=float) + 0.5 * (1 - s) * self.span(i, j)
        table = self.beta[(i, j)]
        return invert_monotone(table, np.clip(target, table.values[0], table.values[-1]))

    def xi_left(self, i: int, j: int, eta) -> np.ndarray:
        """
        Left boundary xi_l(eta) of D_ij: eta itself above the xi axis,
        the inverse of eta_l below it.

        Raises:
            OutOfRange: If eta is outside [b, a]
        """
        eta = np.asarray(eta, dtype=float)
        a, b = self.bounds(i, j)
        tol = GEOM_TOL * max(1.0, a - b)
        if np.any(eta > a + tol) or np.any(eta < b - tol):
            raise OutOfRange(f"eta outside [{b}, {a}]")
        out = np.array(eta, dtype=float, copy=True)
        below = eta < 0
        if np.any(below):
            if i == j:
                raise OutOfRange("diagonal elements have no domain below the xi axis")
            s = self.s[i, j]
            table = self.gap[(i, j)]
            level = -s * (eta[below] + 0.5 * (1 - s) * (self.phi1[i] - self.phi1[j]))
            zstar = invert_monotone(table, np.clip(level, table.values[0], table.values[-1]))
            bz = interp1(self.beta[(i, j)], zstar)
            out[below] = 0.5 * (1 - s) * self.span(i, j) + s * bz
        return out if out.ndim else float(out)

    def contains(self, i: int, j: int, xi, eta, eps: Optional[float] = None) -> np.ndarray:
        """True where (xi, eta) lies in D_ij (closed, within eps)."""
        xi = np.asarray(xi, dtype=float)
        eta = np.asarray(eta, dtype=float)
        c = self.span(i, j)
        a, _ = self.bounds(i, j)
        eps = GEOM_TOL * max(1.0, c) if eps is None else eps
        box = (xi >= -eps) & (xi <= c + eps)
        low, _ = self.eta_lower(i, j, np.clip(xi, 0.0, c))
        return box & (eta >= low - eps) & (eta <= xi + eps) & (xi + eta <= 2 * a + eps)

    def separation_level(self, i: int, j: int):
        """Level function of (z, zeta) whose sign selects the kernel piece."""
        def level(z, zeta):
            _, eta = self.to_canonical(i, j, np.clip(z, 0.0, 1.0), np.clip(np.minimum(zeta, z), 0.0, 1.0))
            return eta
        return level


def build_atlas(plant: PlantModel, n_grid: int = 51) -> CoordinateAtlas:
    """
    Tabulate the coordinate maps of a validated, convection-free plant.

    Args:
        plant: Validated plant
        n_grid: Kernel grid size; tabulations are at least 20x finer

    Returns:
        CoordinateAtlas
    """
    n = plant.n
    nodes = np.linspace(0.0, 1.0, max(20 * n_grid, 4001))
    lam = np.array([plant.lam(i, nodes) * np.ones_like(nodes) for i in range(n)])
    phi = tuple(GridFn1D(nodes, cumulative_trapezoid(1.0 / np.sqrt(lam[i]), nodes, initial=0.0)) for i in range(n))
    phi1 = np.array([f.values[-1] for f in phi])
    lam0 = lam[:, 0].copy()

    # order of the diffusion coefficients is uniform after validation
    mean = lam.mean(axis=1)
    s = np.where(mean[:, None] >= mean[None, :], 1, -1)

    beta: Dict[Pair, GridFn1D] = {}
    gap: Dict[Pair, GridFn1D] = {}
    z_delta: Dict[Pair, float] = {}
    z_sigma: Dict[Pair, float] = {}
    fine = np.linspace(0.0, 1.0, 10 * n_grid + 1)
    lam_fine = np.array([plant.lam(i, fine) * np.ones_like(fine) for i in range(n)])
    for i in range(n):
        for j in range(n):
            beta[(i, j)] = GridFn1D(nodes, phi[i].values + phi[j].values)
            if i != j:
                gap[(i, j)] = GridFn1D(nodes, -s[i, j] * (phi[i].values - phi[j].values))
            z_delta[(i, j)] = float(fine[np.argmin(np.abs(lam_fine[i] - lam_fine[j]))])
            z_sigma[(i, j)] = float(fine[np.argmin(lam_fine[i] + lam_fine[j])])

    ratios = [np.sqrt(plant.lam(i, z_delta[(i, j)]) / plant.lam(j, z_delta[(i, j)]))
              for i in range(n) for j in range(n) if s[i, j] < 0]
    gamma = 0.5 * (float(max(ratios)) + 1.0) if ratios else 0.5
    logger.debug(f"Built coordinate atlas: phi(1) = {phi1}, gamma = {gamma:.4f}")
    return CoordinateAtlas(plant, phi, phi1, lam0, s, beta, gap, z_delta, z_sigma, gamma)


def _nearest_reached(reached: np.ndarray) -> np.ndarray:
    """Flat index of the nearest reached node for every node (itself where reached)."""
    idx = distance_transform_edt(~reached, return_distances=False, return_indices=True)
    return (idx[0] * reached.shape[1] + idx[1]).ravel()


class CanonicalGrid:
    """
    Uniform node grid over the bounding box of D_ij.

    xi_m = m h and eta_k = (kmin + k) h with h = c / (N - 1), so the xi axis
    is the node row k0 = -kmin and the ray xi = eta passes through nodes.
    The upper sheet knows the nodes with eta >= 0, the lower sheet those
    with eta <= 0; each is extended by ghost layers for interpolation.
    """

    def __init__(self, atlas: CoordinateAtlas, i: int, j: int, N: int):
        self.atlas = atlas
        self.i, self.j, self.N = i, j, N
        c = self.atlas.span(i, j)
        a, b = self.atlas.bounds(i, j)
        self.s = int(self.atlas.s[i, j])
        self.a, self.b, self.c = a, b, c
        self.h = c / (self.N - 1)
        kmin = int(np.floor(b / self.h + 1e-9))
        kmax = max(int(np.ceil(a / self.h - 1e-9)), kmin + 1)
        self.k0 = -kmin
        self.xi = np.arange(self.N) * self.h
        self.eta = np.arange(kmin, kmax + 1) * self.h
        XI, ETA = np.meshgrid(self.xi, self.eta, indexing="ij")
        self.inside = self.atlas.contains(i, j, XI, ETA)

        self.eta_low, self.eta_low_slope = self.atlas.eta_lower(i, j, self.xi)
        Nk = self.eta.size
        self.col_start = np.where(self.inside.any(axis=1), self.inside.argmax(axis=1), Nk)
        self.col_end = np.where(self.inside.any(axis=1), Nk - 1 - self.inside[:, ::-1].argmax(axis=1), -1)
        self.row_start = np.where(self.inside.any(axis=0), self.inside.argmax(axis=0), self.N)
        rows = self.eta.copy()
        rows = np.clip(rows, b, a)
        self.xi_left = self.atlas.xi_left(i, j, rows) if i != j else np.maximum(rows, 0.0)

        Z = np.full(XI.shape, np.nan)
        ZETA = np.full(XI.shape, np.nan)
        zin, zetain = self.atlas.from_canonical(i, j, XI[self.inside], ETA[self.inside], check=False)
        Z[self.inside] = zin
        ZETA[self.inside] = np.minimum(zetain, zin)
        self.Z, self.ZETA = Z, ZETA

        krow = np.arange(Nk)[None, :]
        self.up_known = self.inside & (krow >= self.k0)
        self.lo_known = self.inside & (krow <= self.k0)
        self.E_up, self.up_reached = extension_operator(self.up_known, GHOST_LAYERS)
        self.E_lo, self.lo_reached = extension_operator(self.lo_known, GHOST_LAYERS)
        self.up_nearest = _nearest_reached(self.up_reached)
        self.lo_nearest = _nearest_reached(self.lo_reached)
        logger.debug(f"Canonical grid ({i + 1}, {j + 1}): {self.N}x{Nk} nodes, "
                     f"{int(self.inside.sum())} inside, h = {self.h:.4g}")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.inside.shape

    @property
    def size(self) -> int:
        return self.inside.size

    @property
    def diagonal(self) -> bool:
        return self.i == self.j

    @cached_property
    def level(self) -> np.ndarray:
        """Node eta as a (N, Nk) array."""
        return np.broadcast_to(self.eta[None, :], self.shape)

    def upper_side(self, eta: np.ndarray) -> np.ndarray:
        """Sheet selection for query points: True selects the upper sheet."""
        eta = np.asarray(eta, dtype=float)
        if self.diagonal:
            return np.ones(eta.shape, dtype=bool)
        return eta >= 0

    def stencil(self, xi: np.ndarray, eta: np.ndarray, weights: np.ndarray,
                rows: np.ndarray, n_rows: int) -> csr_matrix:
        """
        Sparse operator summing weighted bilinear interpolants of this
        element at query points into the given output rows.

        The result acts on the flattened node values of the element (known
        nodes only); ghost values are folded in through the extension
        operators. Corners past the ghost layers, which occur in the narrow
        corners of the domain, read the nearest defined node of their sheet.
        """
        xi = np.asarray(xi, dtype=float).ravel()
        eta = np.asarray(eta, dtype=float).ravel()
        weights = np.broadcast_to(np.asarray(weights, dtype=float), xi.shape).ravel()
        rows = np.broadcast_to(np.asarray(rows), xi.shape).ravel()
        N, Nk = self.shape
        u = np.clip(xi / self.h, 0.0, N - 1.0)
        w = np.clip((eta - self.eta[0]) / self.h, 0.0, Nk - 1.0)
        mi = np.minimum(np.floor(u).astype(int), N - 2)
        ki = np.minimum(np.floor(w).astype(int), Nk - 2)
        tu = u - mi
        tw = w - ki
        corner = np.stack([mi * Nk + ki, (mi + 1) * Nk + ki, mi * Nk + ki + 1, (mi + 1) * Nk + ki + 1], axis=1)
        cw = np.stack([(1 - tu) * (1 - tw), tu * (1 - tw), (1 - tu) * tw, tu * tw], axis=1)
        upper = self.upper_side(eta)

        total = csr_matrix((n_rows, self.size))
        sheets = ((upper, self.E_up, self.up_reached, self.up_nearest),
                  (~upper, self.E_lo, self.lo_reached, self.lo_nearest))
        for side, E, reached, nearest in sheets:
            if not np.any(side):
                continue
            c = corner[side]
            wts = cw[side]
            clamped = (wts > 1e-12) & ~reached.ravel()[c]
            if np.any(clamped):
                logger.debug(f"Element ({self.i + 1}, {self.j + 1}): {int(clamped.sum())} stencil corners "
                             f"read their nearest node")
            c = nearest[c]
            data = (wts * weights[side][:, None]).ravel()
            r = np.repeat(rows[side], 4)
            S = coo_matrix((data, (r, c.ravel())), shape=(n_rows, self.size)).tocsr()
            total = total + S @ E
        return total.tocsr()

    def sheets(self, values: np.ndarray, fill: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        """
        Upper and lower sheets (ghost-extended) of node values.

        Nodes past the ghost layers are NaN, or with `fill` the value of the
        nearest defined node of the same sheet.
        """
        flat = np.where(self.inside, values, 0.0).ravel()
        up = self.E_up @ flat
        lo = self.E_lo @ flat
        if fill:
            return up[self.up_nearest].reshape(self.shape), lo[self.lo_nearest].reshape(self.shape)
        up, lo = up.reshape(self.shape), lo.reshape(self.shape)
        return np.where(self.up_reached, up, np.nan), np.where(self.lo_reached, lo, np.nan)

    def as_function(self, values: np.ndarray) -> PiecewiseGridFn2D:
        """Piecewise grid function in (xi, eta) from node values."""
        up, lo = self.sheets(values)
        i, j = self.i, self.j
        separation = None if self.diagonal else (lambda xi, eta: np.asarray(eta, dtype=float))
        return PiecewiseGridFn2D(self.xi, self.eta, up, lo, self.inside.copy(), separation,
                                 lambda xi, eta: self.atlas.contains(i, j, xi, eta))

    def column_integral(self, J: np.ndarray, J_start: np.ndarray) -> np.ndarray:
        """
        int_{eta_l(xi_m)}^{eta_k} J d eta at every inside node.

        J holds node values, J_start the integrand at (xi_m, eta_l(xi_m)).
        """
        h = self.h
        C = np.zeros(self.shape)
        C[:, 1:] = np.cumsum(0.5 * h * (J[:, 1:] + J[:, :-1]), axis=1)
        m = np.arange(self.N)
        valid = self.col_start < self.shape[1]
        ks = np.where(valid, self.col_start, 0)
        seg = 0.5 * (self.eta[ks] - self.eta_low) * (J_start + J[m, ks])
        out = seg[:, None] + C - C[m, ks][:, None]
        return np.where(self.inside, out, 0.0)

    def row_integral(self, H: np.ndarray, H_start: np.ndarray) -> np.ndarray:
        """
        int_{xi_l(eta_k)}^{xi_m} H d xi at every inside node.

        H_start holds the integrand at (xi_l(eta_k), eta_k).
        """
        h = self.h
        R = np.zeros(self.shape)
        R[1:, :] = np.cumsum(0.5 * h * (H[1:, :] + H[:-1, :]), axis=0)
        k = np.arange(self.shape[1])
        valid = self.row_start < self.N
        ms = np.where(valid, self.row_start, 0)
        seg = 0.5 * (self.xi[ms] - self.xi_left) * (H_start + H[ms, k])
        out = seg[None, :] + R - R[ms, k][None, :]
        return np.where(self.inside, out, 0.0)

    def gamma_nodes(self) -> np.ndarray:
        """Indices (m, k) of the inside nodes on the ray xi = eta, eta >= 0, by increasing eta."""
        ks = np.arange(self.k0, self.shape[1])
        ms = ks - self.k0
        ok = (ms < self.N) & self.inside[np.minimum(ms, self.N - 1), ks]
        return np.stack([ms[ok], ks[ok]], axis=1)


def build_grids(atlas: CoordinateAtlas, grid_n: int) -> Dict[Pair, CanonicalGrid]:
    """Canonical grids of every kernel element."""
    return {(i, j): CanonicalGrid(atlas, i, j, grid_n) for i in range(atlas.n) for j in range(atlas.n)}
