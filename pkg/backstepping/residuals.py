"""
Kernel Residuals

Checks a converged kernel against the kernel equations: the hyperbolic
equation of every canonical element at interior nodes, the boundary
conditions at zeta = 0, the trace conditions on the diagonal and the
reciprocity between K and L.
"""

import logging
from typing import Dict

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .kernel import KernelSolution, KernelTable, left_trace, volterra_apply
from .model import Pair, PlantModel
from .numerics import GridFn1D

logger = logging.getLogger(__name__)

PROFILES = 5


def pde_residual(solution: KernelSolution) -> Dict[Pair, np.ndarray]:
    """
    4 s G_xi_eta - (a + mu_c) G - coupling[G] + c1 at interior canonical nodes.

    The mixed derivative is a centred difference over the four diagonal
    neighbours of a node; nodes whose neighbours are not all inside, or
    that reach the xi axis of an off-diagonal element, are NaN. The coupling
    term is applied with the assembled operators of the solver.
    """
    G = solution.G_nodes
    out: Dict[Pair, np.ndarray] = {}
    for (i, j), op in solution.operators.items():
        g = op.grid
        J = op.a_mu * G[(i, j)] - op.c1_nodes
        for k, T in op.T.items():
            J = J + (T @ G[(i, k)].ravel()).reshape(g.shape)
        Gij = G[(i, j)]
        mixed = np.zeros(g.shape)
        mixed[1:-1, 1:-1] = (Gij[2:, 2:] - Gij[2:, :-2] - Gij[:-2, 2:] + Gij[:-2, :-2]) / (4 * g.h ** 2)
        ok = np.zeros(g.shape, dtype=bool)
        inside = g.inside
        ok[1:-1, 1:-1] = (inside[1:-1, 1:-1] & inside[2:, 2:] & inside[2:, :-2]
                          & inside[:-2, 2:] & inside[:-2, :-2])
        if not g.diagonal:
            k = np.arange(g.shape[1])[None, :]
            ok &= np.abs(k - g.k0) > 1
        out[(i, j)] = np.where(ok, 4 * g.s * mixed - J, np.nan)
    return out


def diagonal_trace(plant: PlantModel, mu_c: float, i: int, z: np.ndarray) -> np.ndarray:
    """K_ii(z, z) = -lambda_i(z)^(-1/2) int_0^z (A_ii + mu_c) / (2 sqrt(lambda_i)) by fine quadrature."""
    fine = np.linspace(0.0, 1.0, 20 * (z.size - 1) + 1)
    lam = plant.lam(i, fine) * np.ones_like(fine)
    integrand = (plant.A[i][i](fine) + mu_c) / (2 * np.sqrt(lam))
    cum = GridFn1D(fine, cumulative_trapezoid(integrand, fine, initial=0.0))
    return -cum(z) / np.sqrt(plant.lam(i, z) * np.ones_like(z))


def offdiagonal_slope(K: KernelTable, i: int, j: int) -> np.ndarray:
    """
    One-sided second-order d/dz K_ij at (z_a, z_a), a < Nz - 2.

    NaN where the stencil (z_a + q h, z_a), q = 0, 1, 2, leaves the piece
    below the separation curve; this happens only next to the corners
    where the curve meets the diagonal.
    """
    n_z = K.z.size
    a = np.arange(n_z - 2)
    piece = K.pieces[(i, j)]
    same = np.ones(a.size, dtype=bool)
    for q in range(3):
        same &= piece.level(K.z[a + q], K.z[a]) < 0
    v = [K.sheet_slice(i, j, (a, a), (a + q, a)) for q in range(3)]
    slope = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * K.h)
    return np.where(same, slope, np.nan)


def reciprocity_error(K: KernelTable, L: KernelTable, n_profiles: int = PROFILES, seed: int = 0) -> float:
    """sup |f - (I + L)[(I - K)[f]]| over seeded random smooth profiles."""
    rng = np.random.default_rng(seed)
    z = K.z
    worst = 0.0
    for _ in range(n_profiles):
        modes = np.arange(1, 5)
        coef = rng.normal(size=(K.n, modes.size)) / modes
        phase = rng.uniform(0, 2 * np.pi, size=(K.n, modes.size))
        f = np.einsum("im,imz->iz", coef, np.sin(np.pi * modes[None, :, None] * z[None, None, :] + phase[..., None]))
        back = volterra_apply(L, volterra_apply(K, f, -1.0), 1.0)
        worst = max(worst, float(np.max(np.abs(back - f))))
    return worst


def residual_report(solution: KernelSolution, seed: int = 0) -> Dict[str, float]:
    """
    Residuals of a converged kernel.

    Returns:
        Dict with pde_residual_sup, pde_residual_l2, bc_residual_sup,
        trace_diag_err, trace_offdiag_err, trace_offdiag_slope_err,
        reciprocity_err, growth_M_hat, iterations and final_update_sup
    """
    plant, K, mu_c = solution.plant, solution.K, solution.target.mu_c
    n = plant.n
    at = solution.atlas

    res = pde_residual(solution)
    values = np.concatenate([r[np.isfinite(r)] for r in res.values()])
    pde_sup = float(np.max(np.abs(values))) if values.size else 0.0
    pde_l2 = float(np.sqrt(np.mean(values ** 2))) if values.size else 0.0

    bc = 0.0
    for i in range(n):
        for j in range(n):
            if at.s[i, j] > 0:
                bc = max(bc, float(np.max(np.abs(left_trace(K, plant, i, j)))))

    diag = max(float(np.max(np.abs(np.diagonal(K.values[i, i]) - diagonal_trace(plant, mu_c, i, K.z))))
               for i in range(n))
    offdiag, slope = 0.0, 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            offdiag = max(offdiag, float(np.max(np.abs(np.diagonal(K.values[i, j])))))
            z = K.z[:-2]
            expected = plant.A[i][j](z) / (plant.lam(j, z) - plant.lam(i, z))
            err = np.abs(offdiagonal_slope(K, i, j) - expected)
            if np.any(np.isfinite(err)):
                slope = max(slope, float(np.nanmax(err)))

    report = {
        "pde_residual_sup": pde_sup,
        "pde_residual_l2": pde_l2,
        "bc_residual_sup": bc,
        "trace_diag_err": diag,
        "trace_offdiag_err": offdiag,
        "trace_offdiag_slope_err": slope,
        "reciprocity_err": reciprocity_error(K, solution.L, seed=seed),
        "growth_M_hat": float(solution.growth_M_hat),
        "iterations": int(solution.iterations_used),
        "final_update_sup": float(solution.final_update_sup),
    }
    logger.info(f"Residual report: PDE sup {pde_sup:.3g}, BC sup {bc:.3g}, diagonal trace {diag:.3g}")
    return report
