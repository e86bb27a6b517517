#!/usr/bin/env python3
"""
pide-backstep - Backstepping Boundary Control for Coupled Parabolic PIDEs

Command-line front end: reads a JSON run configuration, designs the
backstepping kernel, simulates open- and closed-loop behaviour and writes
kernels, gains, trajectories and verification reports as CSV/JSON files.

Subcommands:
    kernel    solve the kernel equations, write K.csv, G.csv, A0_tilde.csv, meta.json
    simulate  closed-loop (or --open-loop) simulation, write trajectory.csv, norms.csv, control.csv
    verify    residuals, trace identities, mu_max and decay-rate fit, write report.json
    eigs      print mu_max and write eigs.csv
"""

import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from backstepping.exceptions import BacksteppingException
from backstepping.model import DEFAULT_EPS_SEP
from repositories.config_repository import JsonConfigRepository
from repositories.interfaces import ConfigDocument, RepositoryException
from repositories.result_repository import CsvResultRepository
from services.kernel_service import KernelService
from services.simulation_service import SimulationService
from services.verification_service import VerificationService

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def load_settings() -> Dict[str, Any]:
    """
    Load defaults from environment variables.

    Raises:
        ValueError: If a variable holds an invalid value
    """
    out_dir = os.getenv("PIDE_BACKSTEP_OUT", "./out")
    log_level = os.getenv("PIDE_BACKSTEP_LOG_LEVEL", "WARNING").upper()
    eps_raw = os.getenv("PIDE_BACKSTEP_EPS_SEP", str(DEFAULT_EPS_SEP))

    if not out_dir:
        raise ValueError("PIDE_BACKSTEP_OUT must not be empty")
    if log_level not in LOG_LEVELS:
        raise ValueError(f"PIDE_BACKSTEP_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}, got {log_level!r}")
    try:
        eps_sep = float(eps_raw)
    except ValueError:
        raise ValueError(f"PIDE_BACKSTEP_EPS_SEP must be a number, got {eps_raw!r}")
    if not eps_sep > 0:
        raise ValueError(f"PIDE_BACKSTEP_EPS_SEP must be positive, got {eps_sep}")

    return {
        'out_dir': out_dir,
        'log_level': log_level,
        'eps_sep': eps_sep,
    }


def build_parser(settings: Dict[str, Any]) -> argparse.ArgumentParser:
    """Argument parser with one subcommand per artefact family."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration")
    common.add_argument("--out", default=settings['out_dir'], help="output directory (default: %(default)s)")
    common.add_argument("--mu-c", type=float, dest="mu_c", help="override the target decay parameter")
    common.add_argument("--grid", type=int, help="override the nodes per canonical axis")
    common.add_argument("--tol", type=float, help="override the iteration tolerance")
    common.add_argument("--t-end", type=float, dest="t_end", help="override the simulated time span")
    common.add_argument("--dt", type=float, help="override the time step")
    common.add_argument("--seed", type=int, default=0, help="seed of the random reciprocity profiles")
    common.add_argument("--log-level", dest="log_level", type=str.upper, choices=LOG_LEVELS,
                        default=settings['log_level'], help="logging level (default: %(default)s)")

    parser = argparse.ArgumentParser(
        prog="pide-backstep",
        description="Backstepping boundary control design for coupled parabolic PIDEs",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("kernel", parents=[common], help="solve the kernel equations")
    simulate = commands.add_parser("simulate", parents=[common], help="simulate the plant")
    simulate.add_argument("--open-loop", action="store_true", help="simulate with zero input")
    commands.add_parser("verify", parents=[common], help="write the verification report")
    commands.add_parser("eigs", parents=[common], help="estimate mu_max")
    return parser


def apply_overrides(doc: ConfigDocument, args: argparse.Namespace) -> ConfigDocument:
    """Config document with the command-line overrides applied."""
    target, solver, sim = doc.target, doc.solver, doc.sim
    if args.mu_c is not None:
        target = target.with_mu_c(args.mu_c)
    if args.grid is not None:
        solver = replace(solver, grid_n=args.grid)
    if args.tol is not None:
        solver = replace(solver, tol=args.tol)
    if args.t_end is not None:
        sim = replace(sim, t_end=args.t_end)
    if args.dt is not None:
        sim = replace(sim, dt=args.dt)
    return replace(doc, target=target, solver=solver, sim=sim)


class PideBackstepApp:
    """
    Command handlers wired to repositories and services.

    Example:
        app = PideBackstepApp(out_dir="out")
        app.cmd_eigs(doc)
    """

    def __init__(self, out_dir: str = "./out", eps_sep: float = DEFAULT_EPS_SEP):
        """
        Initialize the application with its repositories and services.

        Args:
            out_dir: Directory receiving the result files
            eps_sep: Minimal admissible gap between diffusion coefficients
        """
        self.out_dir = out_dir

        # Initialize repositories
        self.config_repository = JsonConfigRepository()
        self.result_repository = CsvResultRepository(out_dir=out_dir)

        # Initialize services
        self.kernel_service = KernelService(eps_sep=eps_sep)
        self.simulation_service = SimulationService(self.kernel_service)
        self.verification_service = VerificationService(self.simulation_service)

    def load(self, args: argparse.Namespace) -> ConfigDocument:
        return apply_overrides(self.config_repository.parse_config(args.config), args)

    def cmd_kernel(self, doc: ConfigDocument) -> None:
        """Solve the kernel and write K.csv, G.csv, A0_tilde.csv, gains and meta.json."""
        design = self.kernel_service.design(doc.plant, doc.target, doc.solver)
        meta = self.kernel_service.meta(design)
        meta['tol'] = doc.solver.tol
        self.result_repository.save_kernel(design.solution, design.solution.A0_tilde, meta)
        gain_nodes = self.simulation_service.grid_nodes(doc.sim)
        self.result_repository.save_gain(self.kernel_service.gain(design, gain_nodes))
        print(f"kernel: {meta['iterations']} iterations, final update {meta['final_update_sup']:.3g}")

    def cmd_simulate(self, doc: ConfigDocument, open_loop: bool = False) -> None:
        """Simulate and write trajectory.csv, norms.csv and control.csv."""
        if open_loop:
            trajectory = self.simulation_service.open_loop(doc.plant, doc.target, doc.sim)
        else:
            design = self.kernel_service.design(doc.plant, doc.target, doc.solver)
            trajectory = self.simulation_service.closed_loop(design, doc.sim)
        self.result_repository.save_trajectory(trajectory)
        print(f"simulate: ||x(0)|| = {trajectory.norm_series[0]:.6g}, "
              f"||x({trajectory.norm_times[-1]:g})|| = {trajectory.norm_series[-1]:.6g}")

    def cmd_verify(self, doc: ConfigDocument, seed: int = 0) -> None:
        """Design, check and write report.json."""
        design = self.kernel_service.design(doc.plant, doc.target, doc.solver)
        report = self.verification_service.verify(design, doc.sim, seed=seed)
        self.result_repository.save_report(report)
        print(f"verify: mu_max = {report['mu_max']:.6g}, decay rate fit = {report['decay_rate_fit']}")

    def cmd_eigs(self, doc: ConfigDocument) -> float:
        """Print mu_max and write eigs.csv."""
        normalized = self.kernel_service.normalize(doc.plant, doc.target)
        tops = self.verification_service.eigenvalues(normalized)
        mu_max = max(tops)
        self.result_repository.save_eigenvalues(tops, mu_max)
        print(f"{mu_max:.6g}")
        return mu_max

    def run(self, args: argparse.Namespace) -> None:
        doc = self.load(args)
        if args.command == "kernel":
            self.cmd_kernel(doc)
        elif args.command == "simulate":
            self.cmd_simulate(doc, open_loop=args.open_loop)
        elif args.command == "verify":
            self.cmd_verify(doc, seed=args.seed)
        elif args.command == "eigs":
            self.cmd_eigs(doc)


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns the process exit status."""
    try:
        settings = load_settings()
    except ValueError as e:
        print(f"pide-backstep: {e}", file=sys.stderr)
        return 2

    args = build_parser(settings).parse_args(argv)

    # Configure logging
    logging.basicConfig(
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        level=getattr(logging, args.log_level)
    )

    try:
        app = PideBackstepApp(out_dir=args.out, eps_sep=settings['eps_sep'])
        app.run(args)
    except (BacksteppingException, RepositoryException) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    except KeyboardInterrupt:
        logger.info("Stopped by user")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
