import math

import numpy as np
import pytest

from backstepping.residuals import (
    diagonal_trace,
    pde_residual,
    reciprocity_error,
    residual_report,
)
from services.kernel_service import KernelService

REPORT_KEYS = {
    "pde_residual_sup", "pde_residual_l2", "bc_residual_sup", "trace_diag_err",
    "trace_offdiag_err", "trace_offdiag_slope_err", "reciprocity_err",
    "growth_M_hat", "iterations", "final_update_sup",
}


def test_diagonal_trace_of_a_constant_reaction(scalar_plant):
    z = np.linspace(0.0, 1.0, 51)
    assert np.allclose(diagonal_trace(scalar_plant, 0.0, 0, z), -2.5 * z, atol=1e-12)
    assert np.allclose(diagonal_trace(scalar_plant, 1.0, 0, z), -3.0 * z, atol=1e-12)


def test_pde_residual_is_defined_on_interior_nodes_only(scalar_solution):
    g = scalar_solution.grids[(0, 0)]
    res = pde_residual(scalar_solution)[(0, 0)]
    assert res.shape == g.shape
    assert np.all(np.isnan(res[~g.inside]))
    assert np.all(np.isnan(res[:, g.k0]))
    # the ray xi = eta
    m = np.arange(g.shape[1])
    assert np.all(np.isnan(res[m, m]))
    assert np.isfinite(res[25, 10])


def test_scalar_report(scalar_solution):
    report = residual_report(scalar_solution)
    K = scalar_solution.K
    assert set(report) == REPORT_KEYS
    assert report["trace_diag_err"] < 1e-3
    assert report["trace_offdiag_err"] == 0.0
    assert report["bc_residual_sup"] < 1e-12
    assert report["reciprocity_err"] < 1e-2
    assert report["pde_residual_sup"] < 0.1 * np.nanmax(np.abs(K.values))
    assert report["iterations"] == scalar_solution.iterations_used


@pytest.mark.slow
def test_scalar_residual_halves_under_refinement(scalar_solution, scalar_solution_fine):
    coarse = residual_report(scalar_solution)["pde_residual_sup"]
    fine = residual_report(scalar_solution_fine)["pde_residual_sup"]
    assert math.isfinite(coarse) and coarse > 0
    assert fine <= 0.5 * coarse


def test_reciprocity_is_reproducible_for_a_seed(scalar_solution):
    K, L = scalar_solution.K, scalar_solution.L
    assert reciprocity_error(K, L, seed=3) == reciprocity_error(K, L, seed=3)


@pytest.mark.slow
class TestCoupledExampleResiduals:

    @pytest.fixture(scope="class")
    def report(self, coupled_design):
        return residual_report(coupled_design.solution)

    @pytest.fixture(scope="class")
    def refined(self, coupled_refined):
        return tuple(residual_report(sol) for sol in coupled_refined)

    def test_trace_identities(self, report):
        assert report["trace_diag_err"] < 1e-3
        assert report["trace_offdiag_err"] < 1e-8

    def test_reciprocity(self, report):
        assert report["reciprocity_err"] < 1e-2

    def test_grid_101_design_succeeds(self, coupled_refined):
        fine = coupled_refined[1]
        assert fine.grid_n == 101
        assert np.all(np.isfinite(fine.K.values[np.isfinite(fine.K.values)]))

    def test_interior_residual_shrinks_under_refinement(self, refined):
        coarse, fine = refined
        assert coarse["pde_residual_l2"] / fine["pde_residual_l2"] >= 1.5
        assert fine["pde_residual_sup"] < coarse["pde_residual_sup"]

    def test_offdiagonal_slope_converges(self, refined, coupled_refined):
        coarse, fine = refined
        h = coupled_refined[0].K.h
        assert fine["trace_offdiag_slope_err"] <= 0.7 * coarse["trace_offdiag_slope_err"]
        assert fine["trace_offdiag_slope_err"] < 5 * h

    def test_design_meta_matches_the_report(self, report, coupled_design):
        meta = KernelService.meta(coupled_design)
        assert meta["iterations"] == report["iterations"]
        assert meta["state_order"] == [1, 2]
