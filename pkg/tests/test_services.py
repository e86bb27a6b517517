import json
import math
from dataclasses import replace
from types import SimpleNamespace
from unittest import mock

import numpy as np
import pytest

from backstepping.exceptions import GridMismatch, TargetMismatch
from backstepping.feedback import build_gain
from backstepping.sim import top_eigenvalues
from repositories.config_repository import JsonConfigRepository
from repositories.interfaces import SimSettings, SolverSettings
from services.kernel_service import KernelDesign, KernelService, NormalizedPlant
from services.simulation_service import SimulationService, SweepResult
from services.verification_service import VerificationService

PI2 = math.pi ** 2

# state 1 has a Robin condition at z = 0, state 2 a Dirichlet one
SWAPPED_CONFIG = {
    "plant": {
        "n": 2,
        "lambda": ["2", "1"],
        "A": [[1, 0], [0.5, 1]],
        "B0_1": [[1, 0], [0, 0]],
        "B0_0": [[0.5, 0], [0, 1]],
        "B1_1": [0, 0],
        "B1_0": [[1, 0], [0, 1]],
    },
    "target": {"mu_c": 1, "Bt1_1": [0, 0], "Bt1_0": [1, 1]},
    "sim": {"x0": ["z", "sin(pi*z)"], "t_end": 0.1},
}


@pytest.fixture(scope="module")
def swapped_doc():
    return JsonConfigRepository().parse_text(json.dumps(SWAPPED_CONFIG))


@pytest.fixture(scope="module")
def services():
    kernels = KernelService()
    simulations = SimulationService(kernels)
    return kernels, simulations, VerificationService(simulations)


class TestKernelService:

    def test_normalization_puts_dirichlet_states_first(self, swapped_doc):
        norm = KernelService().normalize(swapped_doc.plant, swapped_doc.target)
        assert isinstance(norm, NormalizedPlant)
        assert list(norm.order) == [1, 0]
        assert norm.plant.m == 1
        assert float(norm.plant.lam(0, 0.5)) == 1.0
        assert norm.plant.B0_0[1, 1] == 0.5
        assert norm.weight.is_identity

    def test_physical_plant_keeps_the_user_order(self, swapped_doc):
        norm = KernelService().normalize(swapped_doc.plant, swapped_doc.target)
        physical = norm.physical
        assert float(physical.lam(0, 0.5)) == 2.0
        assert np.array_equal(physical.B0_1, np.diag([1.0, 0.0]))
        assert np.array_equal(physical.B0_0, np.diag([0.5, 1.0]))
        assert np.allclose(physical.matrix(physical.A, 0.3), [[1.0, 0.0], [0.5, 1.0]])

    def test_normalization_rejects_mismatched_targets(self, scalar_doc):
        target = replace(scalar_doc.target, Bt1_1=np.array([1.0]))
        with pytest.raises(TargetMismatch):
            KernelService().normalize(scalar_doc.plant, target)

    def test_design_hands_the_normalized_plant_to_the_solver(self, scalar_doc):
        settings = SolverSettings(grid_n=21, tol=1e-4, max_iter=7)
        with mock.patch("services.kernel_service.solve_kernel") as solve:
            design = KernelService().design(scalar_doc.plant, scalar_doc.target, settings)
        args, kwargs = solve.call_args
        assert args[0].n == 1 and args[0].lambda_d1 is not None
        assert kwargs == {"grid_n": 21, "tol": 1e-4, "max_iter": 7}
        assert design.solution is solve.return_value

    def test_coupling_is_reported_in_the_user_order(self):
        f = object()
        design = KernelDesign(SimpleNamespace(order=np.array([1, 0])), SimpleNamespace(A0_tilde={(0, 1): f}))
        assert design.A0_tilde == {(1, 0): f}

    def test_gain_without_normalization_matches_the_kernel_gain(self, scalar_design):
        z = np.linspace(0.0, 1.0, 102)
        norm = scalar_design.normalized
        expected = build_gain(scalar_design.solution.K, norm.plant, norm.target, z)
        gain = KernelService().gain(scalar_design, z)
        assert np.array_equal(gain.k_kernel, expected.k_kernel)
        assert np.array_equal(gain.k_boundary, expected.k_boundary)

    def test_meta(self, scalar_design):
        meta = KernelService.meta(scalar_design)
        assert meta["n"] == 1
        assert meta["mu_c"] == 0.0
        assert meta["grid_n"] == 51
        assert meta["state_order"] == [1]
        assert meta["convection_eliminated"] is False
        assert len(meta["update_history"]) == meta["iterations"] + 1
        assert meta["final_update_sup"] < 1e-6


class TestSimulationService:

    def test_initial_state_needs_one_profile_per_state(self, scalar_doc):
        x0 = SimulationService.initial_state(scalar_doc.sim, 1)
        assert x0.shape == (1, 102)
        assert x0[0, 51] == pytest.approx(math.sin(math.pi * 51 / 101))
        with pytest.raises(GridMismatch):
            SimulationService.initial_state(SimSettings(), 1)

    def test_open_loop_runs_on_the_physical_plant(self, services, swapped_doc):
        _, simulations, _ = services
        traj = simulations.open_loop(swapped_doc.plant, swapped_doc.target, swapped_doc.sim)
        assert traj.snapshots.shape == (101, 2, 102)
        # state 2 is pinned at z = 0, state 1 is not
        assert np.allclose(traj.snapshots[1:, 1, 0], 0.0)
        assert not np.allclose(traj.snapshots[1:, 0, 0], 0.0)

    def test_closed_loop_decay(self, services, scalar_design, scalar_doc):
        _, simulations, _ = services
        traj = simulations.closed_loop(scalar_design, scalar_doc.sim)
        assert simulations.decay_rate(traj) == pytest.approx(PI2, rel=0.15)

    def test_target_loop_tracks_the_transformed_closed_loop(self, services, scalar_design, scalar_doc):
        _, simulations, _ = services
        settings = replace(scalar_doc.sim, t_end=0.3)
        transformed = simulations.to_target(scalar_design, simulations.closed_loop(scalar_design, settings))
        target = simulations.target_loop(scalar_design, settings)
        assert transformed.l2_norms[0] == pytest.approx(target.l2_norms[0], rel=1e-12)
        assert np.max(np.abs(transformed.l2_norms - target.l2_norms)) < 0.1 * target.l2_norms[0]

    def test_sweep_uses_one_design_per_value(self, services, scalar_doc):
        kernels, simulations, _ = services
        fake = SimpleNamespace(solution=SimpleNamespace(iterations_used=4))
        traj = SimpleNamespace(norm_series=np.array([1.0, 0.5]))
        with mock.patch.object(kernels, "design", return_value=fake) as design, \
                mock.patch.object(simulations, "closed_loop", return_value=traj), \
                mock.patch.object(SimulationService, "decay_rate", side_effect=lambda t: 3.0):
            results = simulations.sweep_mu_c(scalar_doc.plant, scalar_doc.target, [1.0, 4.0], max_workers=2)
        assert set(results) == {1.0, 4.0}
        assert results[4.0] == SweepResult(4.0, 4, 3.0, 0.5)
        assert sorted(call.args[1].mu_c for call in design.call_args_list) == [1.0, 4.0]

    def test_sweep_rates_grow_with_mu_c(self, services, scalar_doc):
        _, simulations, _ = services
        settings = replace(scalar_doc.sim, t_end=0.5)
        results = simulations.sweep_mu_c(scalar_doc.plant, scalar_doc.target, [0.0, 5.0],
                                         solver=scalar_doc.solver, settings=settings, max_workers=2)
        assert results[5.0].decay_rate > results[0.0].decay_rate + 2.0


class TestVerificationService:

    def test_eigenvalues_in_the_user_order(self, swapped_doc):
        norm = KernelService().normalize(swapped_doc.plant, swapped_doc.target)
        tops = VerificationService.eigenvalues(norm)
        raw = top_eigenvalues(norm.plant, norm.target)
        assert tops == [raw[1], raw[0]]
        assert VerificationService.mu_max(norm) == pytest.approx(max(tops))

    def test_scalar_coupling_structure(self, scalar_design):
        assert VerificationService.coupling_structure_error(scalar_design) == 0.0

    def test_report_without_simulation(self, services, scalar_design):
        _, _, verifier = services
        report = verifier.verify(scalar_design)
        assert report["decay_rate_fit"] is None
        assert report["open_loop_growth"] is None
        assert report["open_loop_abscissa"] == pytest.approx(5.0 - PI2, rel=2e-2)
        assert report["mu_max"] == pytest.approx(-PI2, rel=1e-2)
        assert report["a0_tilde_structure_err"] == 0.0
        assert report["trace_diag_err"] < 1e-3

    def test_report_with_simulation(self, services, scalar_design, scalar_doc):
        _, _, verifier = services
        report = verifier.verify(scalar_design, scalar_doc.sim, seed=4)
        assert report["decay_rate_fit"] == pytest.approx(PI2, rel=0.15)
        assert report["open_loop_growth"] < 1.0
        assert report["target_crosscheck_err"] < 0.1


@pytest.mark.slow
class TestCoupledExampleClosedLoop:
    """Closed-loop behaviour of the two-state example."""

    def test_mu_max(self, coupled_normalized):
        assert VerificationService.mu_max(coupled_normalized) == pytest.approx(-1.36, abs=0.05)

    def test_open_loop_grows(self, services, coupled_doc):
        _, simulations, _ = services
        traj = simulations.open_loop(coupled_doc.plant, coupled_doc.target, coupled_doc.sim)
        assert traj.norm_series[-1] > traj.norm_series[0]

    def test_open_loop_abscissa_is_positive(self, coupled_normalized, coupled_doc):
        assert VerificationService.open_loop_abscissa(coupled_normalized, coupled_doc.sim) > 1.0

    def test_closed_loop_decay_rate(self, services, coupled_design, coupled_doc):
        _, simulations, _ = services
        traj = simulations.closed_loop(coupled_design, coupled_doc.sim)
        assert 2.35 <= simulations.decay_rate(traj) <= 4.37

    def test_larger_mu_c_decays_faster(self, services, coupled_doc):
        _, simulations, _ = services
        results = simulations.sweep_mu_c(coupled_doc.plant, coupled_doc.target, [2.0, 8.0],
                                         solver=coupled_doc.solver, settings=coupled_doc.sim, max_workers=2)
        assert results[8.0].decay_rate > results[2.0].decay_rate

    def test_coupling_structure(self, coupled_design):
        assert VerificationService.coupling_structure_error(coupled_design) == 0.0
        assert set(coupled_design.A0_tilde) == {(0, 1)}
