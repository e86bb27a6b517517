"""
Kernel Solver

Successive approximation of the canonical kernel integral equations on every
domain D_ij, the map of the converged solution back to the original (z, zeta)
triangle, extraction of the coupling matrix A0~ of the target system and the
inverse kernel from the reciprocity relation.

The integral operators are linear, so each one is assembled once as sparse
matrices acting on the flattened node values of the coupled elements; a
sweep is then a handful of sparse products and cumulative sums per element.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.sparse import csr_matrix
from scipy.special import i1, j1

from .coefficients import CoefficientTables, build_coefficients, vanishes
from .coords import CanonicalGrid, CoordinateAtlas, build_atlas, build_grids
from .exceptions import GridTooCoarse, NoConvergence, OutsideDomain
from .model import Pair, PlantModel, TargetSpec, sorted_pairs
from .numerics import GridFn1D, Level, PiecewiseGridFn2D, bilinear, factorial_log, ghost_fill

logger = logging.getLogger(__name__)

Iterates = Dict[Pair, np.ndarray]

MIN_GRID = 5
LEVEL_TOL = 1e-12


# Operator assembly

def _segment_points(lo: np.ndarray, hi: np.ndarray, N: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Trapezoid nodes on [lo, hi] per segment, ceil(N (hi - lo)) + 2 nodes each.

    Returns:
        (owner, points, weights): segment index, abscissa and weight per node
    """
    length = np.maximum(hi - lo, 0.0)
    counts = np.ceil(N * length).astype(int) + 2
    owner = np.repeat(np.arange(lo.size), counts)
    starts = np.cumsum(counts) - counts
    local = np.arange(int(counts.sum())) - np.repeat(starts, counts)
    last = np.repeat(counts - 1, counts)
    points = np.repeat(lo, counts) + local / last * np.repeat(length, counts)
    weights = np.repeat(length / (counts - 1), counts)
    weights = np.where((local == 0) | (local == last), 0.5 * weights, weights)
    return owner, points, weights


@dataclass
class ElementOperators:
    """
    Linear operators of the integral equations of one element (i, j).

    Attributes:
        grid: Canonical grid of (i, j)
        a_mu: a + mu_c at the nodes
        T: Per k, the c2 cross term plus the c3 integral acting on element (i, k)
        P: Per k, the same integrand at the column start points (rows = columns)
        D: Per k, the c6 integral on the ray xi = eta (rows = eta rows)
        robin: True if the boundary ray carries the Robin bracket
        c4: c4_j
        h_col: Boundary value of H per column
        h_row: Boundary value of H at the left end of each row below the xi axis
        c1_nodes, c1_start: c1 at the nodes and at the column start points
        gamma: Node indices of the ray xi = eta
    """
    grid: CanonicalGrid
    a_mu: np.ndarray
    T: Dict[int, csr_matrix] = field(default_factory=dict)
    P: Dict[int, csr_matrix] = field(default_factory=dict)
    D: Dict[int, csr_matrix] = field(default_factory=dict)
    robin: bool = False
    c4: float = 0.0
    h_col: Optional[np.ndarray] = None
    h_row: Optional[np.ndarray] = None
    c1_nodes: Optional[np.ndarray] = None
    c1_start: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None


def _element_operators(tables: CoefficientTables, grids: Dict[Pair, CanonicalGrid], i: int, j: int) -> ElementOperators:
    plant, at = tables.plant, tables.atlas
    n = plant.n
    g = grids[(i, j)]
    N, Nk = g.shape
    inside = g.inside
    idx = np.flatnonzero(inside.ravel())
    z = g.Z.ravel()[idx]
    zeta = g.ZETA.ravel()[idx]

    a_mu = np.zeros(g.shape)
    a_mu[inside] = tables.a(i, j, z, zeta) + tables.mu_c
    c1_nodes = np.zeros(g.shape)
    if not vanishes(plant.F[i][j], two_args=True):
        c1_nodes[inside] = tables.c1(i, j, z, zeta)

    cols = np.flatnonzero(g.col_start < Nk)
    zl = at.z_lower(i, j, g.xi[cols])
    c1_start = np.zeros(N)
    c1_start[cols] = tables.c1(i, j, zl, zl)
    h_col = np.zeros(N)
    h_col[cols] = tables.h_boundary(i, j, g.xi[cols])
    h_row = np.zeros(Nk)
    below = np.flatnonzero((np.arange(Nk) < g.k0) & (g.row_start < N))
    if i != j and below.size:
        h_row[below] = tables.c9(i, j, g.xi_left[below])

    ops = ElementOperators(g, a_mu, c4=float(tables.c4[j]), h_col=h_col, h_row=h_row,
                           c1_nodes=c1_nodes, c1_start=c1_start)

    for k in range(n):
        gk = grids[(i, k)]
        xis, etas, weights, rows = [], [], [], []
        if not vanishes(plant.A[k][j]):
            xi, eta = at.to_canonical(i, k, z, zeta)
            xis.append(xi), etas.append(eta), weights.append(tables.c2(k, j, zeta)), rows.append(idx)
        if not vanishes(plant.F[k][j], two_args=True):
            owner, zbar, w = _segment_points(zeta, z, N)
            xi, eta = at.to_canonical(i, k, z[owner], zbar)
            xis.append(xi), etas.append(eta)
            weights.append(w * tables.c3(k, j, zeta[owner], zbar)), rows.append(idx[owner])
        if xis:
            ops.T[k] = gk.stencil(np.concatenate(xis), np.concatenate(etas),
                                  np.concatenate(weights), np.concatenate(rows), g.size)

        w_start = np.zeros(cols.size)
        if not vanishes(plant.A[k][j]):
            w_start += tables.c2(k, j, zl)
        if k == j:
            w_start += tables.a(i, j, zl, zl) + tables.mu_c
        if cols.size and np.any(w_start != 0):
            xi, eta = at.to_canonical(i, k, zl, zl)
            ops.P[k] = gk.stencil(xi, eta, w_start, cols, N)

    if at.s[i, j] > 0 and j >= plant.m:
        ops.robin = True
        ops.gamma = g.gamma_nodes()
        zg = g.Z[ops.gamma[:, 0], ops.gamma[:, 1]]
        for k in range(n):
            if vanishes(plant.A0[k][j]):
                continue
            owner, zbar, w = _segment_points(np.zeros_like(zg), zg, N)
            xi, eta = at.to_canonical(i, k, zg[owner], zbar)
            ops.D[k] = grids[(i, k)].stencil(xi, eta, w * tables.c6(k, j, zbar), ops.gamma[owner, 1], Nk)
    logger.debug(f"Assembled operators of element ({i + 1}, {j + 1}): "
                 f"T {sorted(ops.T)}, P {sorted(ops.P)}, D {sorted(ops.D)}")
    return ops


def build_operators(tables: CoefficientTables, grids: Dict[Pair, CanonicalGrid]) -> Dict[Pair, ElementOperators]:
    """Assemble the integral operators of every element."""
    return {(i, j): _element_operators(tables, grids, i, j) for (i, j) in sorted_pairs(tables.plant.n)}


# Successive approximation

def init_iterates(tables: CoefficientTables, ops: Dict[Pair, ElementOperators],
                  target: TargetSpec) -> Tuple[Iterates, Iterates]:
    """
    Initial increments (dG0, dH0) on every element.

    dG0 is the boundary data on the ray xi = eta: minus the c5 integral for
    Robin columns with lambda_i >= lambda_j, the artificial boundary function
    for lambda_i < lambda_j, zero otherwise. dH0 is the boundary value of H
    minus the c1 integral.
    """
    plant = tables.plant
    dG: Iterates = {}
    dH: Iterates = {}
    for (i, j), op in ops.items():
        g = op.grid
        s = g.s
        Nk = g.shape[1]
        rows = np.zeros(Nk)
        up = np.arange(g.k0, Nk)
        eta_up = g.eta[up]
        if s > 0 and j >= plant.m and not vanishes(plant.A0[i][j]):
            fine = np.linspace(0.0, eta_up[-1], 10 * (up.size - 1) + 1) if up.size > 1 else np.zeros(1)
            cum = cumulative_trapezoid(tables.c5_rho(i, j, fine), fine, initial=0.0)
            rows[up] = -cum[::10]
        elif s < 0:
            rows[up] = np.asarray(target.artificial_bc(i, j)(eta_up), dtype=float) * np.ones_like(eta_up)
        dG[(i, j)] = np.where(g.inside, rows[None, :], 0.0)

        c1_int = g.column_integral(op.c1_nodes, op.c1_start)
        dH[(i, j)] = np.where(g.inside, op.h_col[:, None] - c1_int / (4 * s), 0.0)
    logger.debug(f"Initial increments: sup |dG0| = {_sup(dG):.4g}, sup |dH0| = {_sup(dH):.4g}")
    return dG, dH


def apply_FH(dG: Iterates, ops: Dict[Pair, ElementOperators]) -> Iterates:
    """H increment: (1 / 4s) times the eta integral of (a + mu_c) dG plus the coupling terms."""
    out: Iterates = {}
    for (i, j), op in ops.items():
        g = op.grid
        J = op.a_mu * dG[(i, j)]
        J_start = np.zeros(g.N)
        for k, T in op.T.items():
            J = J + (T @ dG[(i, k)].ravel()).reshape(g.shape)
        for k, P in op.P.items():
            J_start = J_start + P @ dG[(i, k)].ravel()
        out[(i, j)] = g.column_integral(J, J_start) / (4 * g.s)
    return out


def apply_FG(dG: Iterates, dH: Iterates, ops: Dict[Pair, ElementOperators], first: bool = False) -> Iterates:
    """
    G increment: the xi integral of dH along each row plus, on Robin
    elements with lambda_i >= lambda_j, the eta integral along the boundary
    ray of 2 dH + c4 dG + the c6 coupling integral.

    `first` marks the sweep that consumes dH0, whose value on the lower
    boundary is the boundary function of H; later increments vanish there.
    """
    out: Iterates = {}
    for (i, j), op in ops.items():
        g = op.grid
        start = op.h_row if first else np.zeros(g.shape[1])
        G = g.row_integral(dH[(i, j)], start)
        if op.robin and op.gamma.shape[0] > 1:
            m, k = op.gamma[:, 0], op.gamma[:, 1]
            f = 2 * dH[(i, j)][m, k] + op.c4 * dG[(i, j)][m, k]
            for kk, D in op.D.items():
                f = f + (D @ dG[(i, kk)].ravel())[k]
            bracket = np.zeros(g.shape[1])
            bracket[k] = cumulative_trapezoid(f, dx=g.h, initial=0.0)
            G = G + np.where(g.inside, bracket[None, :], 0.0)
        out[(i, j)] = G
    return out


def _sup(values: Iterates) -> float:
    return max((float(np.max(np.abs(v))) for v in values.values()), default=0.0)


# Original coordinates

@dataclass(frozen=True)
class KernelTable:
    """
    Kernel matrix tabulated on the uniform triangle 0 <= zeta <= z <= 1.

    Attributes:
        z: Uniform nodes, shared by both axes
        values: Node samples [i, j, a, b] at (z_a, z_b), NaN where zeta > z
        pieces: Per element, the piecewise grid function across the separation curve
    """
    z: np.ndarray
    values: np.ndarray
    pieces: Dict[Pair, PiecewiseGridFn2D]

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return float(self.z[1] - self.z[0])

    def __getitem__(self, pair: Pair) -> PiecewiseGridFn2D:
        return self.pieces[pair]

    def __call__(self, i: int, j: int, z, zeta, side_hint: str = "auto"):
        return self.pieces[(i, j)](z, zeta, side_hint)

    def node_matrix(self) -> np.ndarray:
        """Samples with zeros above the diagonal, shape (n, n, Nz, Nz)."""
        return np.nan_to_num(self.values, nan=0.0)

    def sheet_slice(self, i: int, j: int, at: Tuple[np.ndarray, np.ndarray],
                    nodes: Tuple[np.ndarray, np.ndarray]) -> np.ndarray:
        """Samples at `nodes` taken from the sheet that owns the points `at`."""
        piece = self.pieces[(i, j)]
        side = piece.level(self.z[at[0]], self.z[at[1]]) >= 0
        up = piece.above[nodes[0], nodes[1]]
        lo = piece.below[nodes[0], nodes[1]]
        chosen = np.where(side, up, lo)
        return np.where(np.isnan(chosen), np.where(side, lo, up), chosen)


def _tabulate(z: np.ndarray, values: np.ndarray, levels: Dict[Pair, Optional[np.ndarray]],
              separations: Dict[Pair, Optional[Level]]) -> KernelTable:
    n = values.shape[0]
    Zg, ZETAg = np.meshgrid(z, z, indexing="ij")
    tri = ZETAg <= Zg + LEVEL_TOL

    def region(a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return (b >= -1e-9) & (b <= a + 1e-9) & (a <= 1 + 1e-9)

    pieces: Dict[Pair, PiecewiseGridFn2D] = {}
    for i in range(n):
        for j in range(n):
            v = values[i, j]
            lvl = levels.get((i, j))
            if lvl is None:
                sheet = ghost_fill(v, tri)
                pieces[(i, j)] = PiecewiseGridFn2D(z, z, sheet, sheet, tri, None, region)
            else:
                above = ghost_fill(v, tri & (lvl >= -LEVEL_TOL))
                below = ghost_fill(v, tri & (lvl <= LEVEL_TOL))
                pieces[(i, j)] = PiecewiseGridFn2D(z, z, above, below, tri, separations[(i, j)], region)
    return KernelTable(z, values, pieces)


def _ray_values(g: CanonicalGrid, G: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """G on the ray xi = eta at levels eta >= 0: linear between ray nodes, extrapolated past the last."""
    nodes = g.gamma_nodes()
    levels = g.eta[nodes[:, 1]]
    values = G[nodes[:, 0], nodes[:, 1]]
    if levels.size == 1:
        return np.full(eta.shape, values[0])
    out = np.interp(eta, levels, values)
    slope = (values[-1] - values[-2]) / (levels[-1] - levels[-2])
    return np.where(eta > levels[-1], values[-1] + slope * (eta - levels[-1]), out)


def row_values(tables: CoefficientTables, g: CanonicalGrid, G: np.ndarray, H: np.ndarray,
               xi: np.ndarray, eta: np.ndarray, on_left: Optional[np.ndarray] = None) -> np.ndarray:
    """
    G at canonical points of D_ij from the row form of its integral equation.

    The value on the left boundary (the ray data for eta >= 0, zero below
    the xi axis) plus the xi integral of H from xi_l(eta). Below the axis
    the integrand starts from the boundary value c9 of H.

    Args:
        tables: Coefficient tables
        g: Canonical grid of the element
        G, H: Node values of the converged solution
        xi, eta: Query points inside D_ij
        on_left: Points known to lie on the left boundary of their row
    """
    at = tables.atlas
    xi = np.asarray(xi, dtype=float)
    level = np.clip(np.asarray(eta, dtype=float), g.b, g.a)
    upper = g.upper_side(level)
    below = ~upper
    xl = np.maximum(level, 0.0)
    if np.any(below):
        xl[below] = at.xi_left(g.i, g.j, level[below])
    if on_left is not None:
        xl = np.where(on_left, xi, xl)
    xl = np.minimum(xl, xi)

    start = np.zeros(xi.shape)
    start[upper] = _ray_values(g, G, level[upper])
    owner, pts, w = _segment_points(xl, xi, g.N)
    up, lo = g.sheets(H, fill=True)
    side = upper[owner]
    Hq = np.empty(pts.size)
    Hq[side] = bilinear(g.xi, g.eta, up, pts[side], level[owner][side])
    Hq[~side] = bilinear(g.xi, g.eta, lo, pts[~side], level[owner][~side])
    if np.any(below):
        head = np.r_[True, owner[1:] != owner[:-1]] & ~side
        Hq[head] = tables.c9(g.i, g.j, pts[head])
    return start + np.bincount(owner, weights=w * Hq, minlength=xi.size)


def to_original(G_nodes: Iterates, H_nodes: Iterates, grids: Dict[Pair, CanonicalGrid],
                tables: CoefficientTables, n_z: int) -> KernelTable:
    """
    Kernel K_ij(z, zeta) = psi_i psi_j / lambda_j(zeta) G_ij(xi, eta) on a uniform triangle.

    G is evaluated by row_values; diagonal points of off-diagonal elements
    are the left ends of their rows.
    """
    atlas = tables.atlas
    plant = atlas.plant
    n = plant.n
    z = np.linspace(0.0, 1.0, n_z)
    Zg, ZETAg = np.meshgrid(z, z, indexing="ij")
    tri = ZETAg <= Zg + LEVEL_TOL
    zt, zetat = Zg[tri], np.minimum(ZETAg[tri], Zg[tri])
    values = np.full((n, n, n_z, n_z), np.nan)
    levels: Dict[Pair, Optional[np.ndarray]] = {}
    separations: Dict[Pair, Optional[Level]] = {}
    for (i, j), g in grids.items():
        xi, eta = atlas.to_canonical(i, j, zt, zetat)
        on_left = (zt == zetat) if i != j else None
        G = row_values(tables, g, G_nodes[(i, j)], H_nodes[(i, j)], xi, eta, on_left)
        if np.any(np.isnan(G)):
            raise OutsideDomain(f"element ({i + 1}, {j + 1}) has triangle nodes without canonical samples")
        values[i, j][tri] = atlas.psi_z(i, zt) * atlas.psi_z(j, zetat) / plant.lam(j, zetat) * G
        if i == j:
            levels[(i, j)] = None
            separations[(i, j)] = None
        else:
            lvl = np.full((n_z, n_z), np.nan)
            lvl[tri] = eta
            levels[(i, j)] = lvl
            separations[(i, j)] = atlas.separation_level(i, j)
    return _tabulate(z, values, levels, separations)


def _trapezoid_rows(z: np.ndarray) -> np.ndarray:
    """W[a, b]: trapezoid weights of node b for the integral over [0, z_a]."""
    n_z = z.size
    h = z[1] - z[0]
    A, B = np.meshgrid(np.arange(n_z), np.arange(n_z), indexing="ij")
    W = np.where((B <= A) & (A > 0), h, 0.0)
    W = np.where(((B == 0) | (B == A)) & (A > 0), 0.5 * h, W)
    return W


def _zeta_slope_at_zero(K: KernelTable, i: int, j: int) -> np.ndarray:
    """One-sided second-order d/dzeta K_ij(z_a, 0) on the sheet owning (z_a, 0)."""
    n_z = K.z.size
    a = np.arange(n_z)
    zero = np.zeros(n_z, dtype=int)
    v = [K.sheet_slice(i, j, (a, zero), (a, zero + q)) for q in range(3)]
    slope = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * K.h)
    fallback = (v[1] - v[0]) / K.h
    slope = np.where(np.isnan(slope), fallback, slope)
    return np.nan_to_num(slope, nan=0.0)


def left_trace(K: KernelTable, plant: PlantModel, i: int, j: int) -> np.ndarray:
    """
    Left boundary expression of element (i, j) at the triangle nodes z_a.

    -lambda_j(0) K_ij(z, 0) for Dirichlet columns, and
    lambda_j(0) K_zeta + (lambda_j'(0) + q_j lambda_j(0)) K - C_ij[K] for
    Robin columns. It is A0~_ij where lambda_i < lambda_j and must vanish
    where lambda_i >= lambda_j.
    """
    z = K.z
    lam0 = float(plant.lam(j, 0.0))
    k0 = np.nan_to_num(K.values[i, j, :, 0], nan=0.0)
    if j < plant.m:
        return -lam0 * k0
    W = _trapezoid_rows(z)
    Kn = K.node_matrix()
    coupling = np.zeros_like(z)
    for k in range(plant.n):
        if vanishes(plant.A0[k][j]):
            continue
        coupling += (W * Kn[i, k]) @ (plant.A0[k][j](z) * np.ones_like(z))
    C = plant.A0[i][j](z) * np.ones_like(z) - coupling
    dk = _zeta_slope_at_zero(K, i, j)
    return lam0 * dk + (float(plant.lam_d1(j, 0.0)) + plant.q_of(j) * lam0) * k0 - C


def extract_A0_tilde(K: KernelTable, plant: PlantModel, atlas: CoordinateAtlas) -> Dict[Pair, GridFn1D]:
    """Coupling A0~_ij(z) of the target system, present only where lambda_i < lambda_j."""
    out: Dict[Pair, GridFn1D] = {}
    for (i, j) in sorted_pairs(plant.n):
        if atlas.s[i, j] < 0:
            out[(i, j)] = GridFn1D(K.z, left_trace(K, plant, i, j))
    return out


def A0_tilde_matrix(A0_tilde: Dict[Pair, GridFn1D], n: int, z: np.ndarray) -> np.ndarray:
    """Sampled A0~ matrix, shape (n, n) + shape(z); exact zeros where no entry exists."""
    z = np.asarray(z, dtype=float)
    out = np.zeros((n, n) + z.shape)
    for (i, j), f in A0_tilde.items():
        out[i, j] = f(z)
    return out


def volterra_apply(table: KernelTable, x: np.ndarray, sign: float) -> np.ndarray:
    """x(z) + sign int_0^z T(z, zeta) x(zeta) dzeta at the table nodes; x has shape (n, Nz)."""
    W = _trapezoid_rows(table.z)
    return x + sign * np.einsum("ab,ijab,jb->ia", W, table.node_matrix(), x)


def descending_permutation(plant: PlantModel) -> np.ndarray:
    """State order by decreasing diffusion; A0~ is strictly lower triangular in it."""
    z = np.linspace(0.0, 1.0, 101)
    means = np.array([np.mean(plant.lam(i, z) * np.ones_like(z)) for i in range(plant.n)])
    return np.argsort(-means, kind="stable")


# Inverse kernel

def volterra_weights(z: np.ndarray) -> np.ndarray:
    """W[a, b, c]: trapezoid weight of node c for the integral over [z_b, z_a]."""
    n_z = z.size
    h = z[1] - z[0]
    A, B, C = np.meshgrid(np.arange(n_z), np.arange(n_z), np.arange(n_z), indexing="ij")
    inside = (B <= C) & (C <= A) & (A > B)
    W = np.where(inside, h, 0.0)
    W = np.where(inside & (C == B), 0.5 * W, W)
    W = np.where(inside & (C == A), 0.5 * W, W)
    return W


def solve_inverse_kernel(K: KernelTable, tol: float = 1e-8, max_iter: int = 200) -> KernelTable:
    """
    Inverse kernel from L(z, zeta) = K(z, zeta) + int_zeta^z L(z, s) K(s, zeta) ds.

    Solved by successive approximation on the triangle nodes of K.

    Raises:
        NoConvergence: If the update does not drop below tol
    """
    Kt = K.node_matrix().transpose(2, 3, 0, 1)
    W = volterra_weights(K.z)
    L = Kt.copy()
    update = 0.0
    for it in range(1, max_iter + 1):
        nxt = Kt + np.einsum("abc,acik,cbkj->abij", W, L, Kt, optimize=True)
        update = float(np.max(np.abs(nxt - L)))
        L = nxt
        if update < tol:
            logger.debug(f"Inverse kernel converged after {it} sweeps (update {update:.3g})")
            break
    else:
        raise NoConvergence(f"inverse kernel did not converge in {max_iter} sweeps", max_iter, update)
    tri = np.isfinite(K.values)
    values = np.where(tri, L.transpose(2, 3, 0, 1), np.nan)
    levels: Dict[Pair, Optional[np.ndarray]] = {}
    separations: Dict[Pair, Optional[Level]] = {}
    Zg, ZETAg = np.meshgrid(K.z, K.z, indexing="ij")
    for pair, piece in K.pieces.items():
        separations[pair] = piece.separation
        levels[pair] = None if piece.separation is None else np.where(
            piece.mask, piece.level(Zg, np.minimum(ZETAg, Zg)), np.nan)
    return _tabulate(K.z, values, levels, separations)


# Diagnostics

def growth_diagnostic(history: List[Tuple[Iterates, Iterates]], grids: Dict[Pair, CanonicalGrid],
                      gamma: float) -> float:
    """
    Smallest M with |dG^l|, |dH^l| <= M^(l+1) / l! (z - gamma zeta)^l at every
    node and recorded sweep l.

    Nodes where z - gamma zeta vanishes are skipped for l >= 1.
    """
    best = 0.0
    for l, (dG, dH) in enumerate(history):
        for pair, g in grids.items():
            base = (g.Z - gamma * g.ZETA)[g.inside]
            for inc in (dG[pair], dH[pair]):
                mag = np.abs(inc[g.inside])
                ok = mag > 0
                if l > 0:
                    ok &= base > 1e-12
                if not np.any(ok):
                    continue
                if l == 0:
                    best = max(best, float(mag[ok].max()))
                    continue
                log_m = (np.log(mag[ok]) + factorial_log(l) - l * np.log(base[ok])) / (l + 1)
                best = max(best, float(np.exp(log_m.max())))
    return best


def scalar_reaction_kernel(c: float, z, zeta) -> np.ndarray:
    """
    Closed-form kernel of x_t = x_zz + c x with x(0) = 0 and mu_c = 0:
    K(z, zeta) = -c zeta I1(x) / x, x = sqrt(c (z^2 - zeta^2)).
    """
    z, zeta = np.broadcast_arrays(np.asarray(z, dtype=float), np.asarray(zeta, dtype=float))
    arg = c * (z ** 2 - zeta ** 2)
    x = np.sqrt(np.abs(arg))
    small = x < 1e-6
    safe = np.where(small, 1.0, x)
    if c >= 0:
        ratio = np.where(small, 0.5 + arg / 16, i1(safe) / safe)
    else:
        ratio = np.where(small, 0.5 + arg / 16, j1(safe) / safe)
    return -c * zeta * ratio


def scalar_reaction_inverse_kernel(c: float, z, zeta) -> np.ndarray:
    """Inverse of scalar_reaction_kernel: L(z, zeta) = -c zeta J1(x) / x."""
    z, zeta = np.broadcast_arrays(np.asarray(z, dtype=float), np.asarray(zeta, dtype=float))
    arg = c * (z ** 2 - zeta ** 2)
    x = np.sqrt(np.abs(arg))
    small = x < 1e-6
    safe = np.where(small, 1.0, x)
    bessel = j1(safe) if c >= 0 else i1(safe)
    ratio = np.where(small, 0.5 - arg / 16, bessel / safe)
    return -c * zeta * ratio


# Driver

@dataclass
class KernelSolution:
    """
    Converged kernel of one plant and target.

    Attributes:
        G, H: Canonical solutions per element, piecewise in (xi, eta)
        K, L: Kernel and inverse kernel on the (z, zeta) triangle
        A0_tilde: Target coupling, only for pairs with lambda_i < lambda_j
        iterations_used: Number of sweeps performed
        final_update_sup: Sup norm of the last increment
        update_history: Sup norm of every increment
        growth_M_hat: Fitted envelope constant of the increments
        operators: Assembled integral operators, reused by the residual check
    """
    plant: PlantModel
    target: TargetSpec
    atlas: CoordinateAtlas
    tables: CoefficientTables
    grids: Dict[Pair, CanonicalGrid]
    G_nodes: Iterates
    H_nodes: Iterates
    G: Dict[Pair, PiecewiseGridFn2D]
    H: Dict[Pair, PiecewiseGridFn2D]
    K: KernelTable
    L: KernelTable
    A0_tilde: Dict[Pair, GridFn1D]
    iterations_used: int
    final_update_sup: float
    update_history: List[float]
    growth_M_hat: float
    history: List[Tuple[Iterates, Iterates]] = field(default_factory=list, repr=False)
    operators: Dict[Pair, ElementOperators] = field(default_factory=dict, repr=False)

    @property
    def grid_n(self) -> int:
        return next(iter(self.grids.values())).N


def solve_kernel(plant: PlantModel, target: TargetSpec, grid_n: int = 51, tol: float = 1e-3,
                 max_iter: int = 50, n_z: Optional[int] = None,
                 atlas: Optional[CoordinateAtlas] = None) -> KernelSolution:
    """
    Solve the kernel equations by successive approximation.

    Args:
        plant: Validated, convection-free plant with Dirichlet states first
        target: Validated target
        grid_n: Nodes per canonical axis
        tol: Stop once every increment is below tol in sup norm
        max_iter: Maximal number of sweeps
        n_z: Triangle nodes per axis for K and L (default grid_n)
        atlas: Prebuilt atlas of the plant

    Returns:
        KernelSolution

    Raises:
        GridTooCoarse: If grid_n < 5
        NoConvergence: If max_iter sweeps leave an increment >= tol
    """
    if grid_n < MIN_GRID:
        raise GridTooCoarse(f"grid_n = {grid_n} < {MIN_GRID}")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    atlas = atlas if atlas is not None else build_atlas(plant, grid_n)
    tables = build_coefficients(plant, atlas, target)
    grids = build_grids(atlas, grid_n)
    ops = build_operators(tables, grids)

    dG, dH = init_iterates(tables, ops, target)
    G = {p: v.astype(np.longdouble) for p, v in dG.items()}
    H = {p: v.astype(np.longdouble) for p, v in dH.items()}
    history = [(dG, dH)]
    update = max(_sup(dG), _sup(dH))
    updates = [update]
    sweeps = 0
    while update >= tol:
        if sweeps >= max_iter:
            raise NoConvergence(f"kernel iteration did not converge in {max_iter} sweeps "
                                f"(last update {update:.3g} >= {tol:.3g})", sweeps, update)
        new_H = apply_FH(dG, ops)
        new_G = apply_FG(dG, dH, ops, first=sweeps == 0)
        dG, dH = new_G, new_H
        for p in G:
            G[p] += dG[p]
            H[p] += dH[p]
        sweeps += 1
        update = max(_sup(dG), _sup(dH))
        if not math.isfinite(update):
            raise NoConvergence(f"kernel iteration diverged in sweep {sweeps}", sweeps, update)
        history.append((dG, dH))
        updates.append(update)
        logger.debug(f"Sweep {sweeps}: sup increment {update:.4g}")

    G_nodes = {p: v.astype(float) for p, v in G.items()}
    H_nodes = {p: v.astype(float) for p, v in H.items()}
    K = to_original(G_nodes, H_nodes, grids, tables, n_z or grid_n)
    L = solve_inverse_kernel(K)
    A0_tilde = extract_A0_tilde(K, plant, atlas)
    M_hat = growth_diagnostic(history, grids, atlas.gamma)
    logger.info(f"Kernel converged after {sweeps} sweeps, last update {update:.3g}, M_hat {M_hat:.4g}")
    return KernelSolution(
        plant=plant, target=target, atlas=atlas, tables=tables, grids=grids,
        G_nodes=G_nodes, H_nodes=H_nodes,
        G={p: grids[p].as_function(v) for p, v in G_nodes.items()},
        H={p: grids[p].as_function(v) for p, v in H_nodes.items()},
        K=K, L=L, A0_tilde=A0_tilde, iterations_used=sweeps, final_update_sup=update,
        update_history=updates, growth_M_hat=M_hat, history=history, operators=ops,
    )
