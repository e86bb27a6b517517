"""
Result Repository Implementation

Concrete implementation of IResultRepository writing CSV tables in long
format and JSON summaries into one output directory. Floats are written
with %.17g so every stored sample reloads to the same double.
"""

import csv
import json
import logging
import os
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from backstepping.feedback import FeedbackGain
from backstepping.kernel import KernelSolution
from backstepping.sim import Trajectory

from .interfaces import (
    IResultRepository,
    KernelSamples,
    RepositoryDataException,
    RepositoryStorageException,
)

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
KERNEL_HEADER = ["i", "j", "z", "zeta", "value"]


def _f(x: float) -> str:
    return FLOAT_FORMAT % float(x)


def _jsonable(value: Any) -> Any:
    """Plain Python values for json.dump; numpy scalars and arrays are converted."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


class CsvResultRepository(IResultRepository):
    """
    Writes run artefacts as CSV and JSON files into a directory.

    Example:
        repo = CsvResultRepository(out_dir="out")
        repo.save_kernel(solution, A0_tilde, meta)
        samples = repo.load_kernel()
    """

    def __init__(self, out_dir: str = "out"):
        """
        Initialize the result repository.

        Args:
            out_dir: Directory that receives the files
        """
        self.out_dir = out_dir
        self._ensure_out_dir()

    def _ensure_out_dir(self) -> None:
        try:
            os.makedirs(self.out_dir, exist_ok=True)
            logger.debug(f"Output directory ensured: {self.out_dir}")
        except OSError as e:
            logger.error(f"Failed to create output directory: {e}")
            raise RepositoryStorageException(f"Failed to create output directory {self.out_dir}: {e}")

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def _write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
        path = self.path(name)
        try:
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(header)
                writer.writerows(rows)
        except OSError as e:
            logger.error(f"Failed to write {path}: {e}")
            raise RepositoryStorageException(f"Failed to write {path}: {e}")
        logger.info(f"Wrote {path}")
        return path

    def _write_json(self, name: str, data: Dict[str, Any]) -> str:
        path = self.path(name)
        try:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(_jsonable(data), f, indent=2, sort_keys=True)
                f.write("\n")
        except (OSError, TypeError, ValueError) as e:
            logger.error(f"Failed to write {path}: {e}")
            raise RepositoryStorageException(f"Failed to write {path}: {e}")
        logger.info(f"Wrote {path}")
        return path

    # Kernels

    def save_kernel(self, solution: KernelSolution, A0_tilde: Dict[Tuple[int, int], Any],
                    meta: Dict[str, Any]) -> None:
        """
        Write K.csv, G.csv, A0_tilde.csv and meta.json.

        K.csv and A0_tilde.csv hold the kernel and coupling in the state order
        of the solution; A0_tilde is given per pair as callables of z.
        """
        K = solution.K
        z = K.z

        def kernel_rows():
            for i in range(K.n):
                for j in range(K.n):
                    for a in range(z.size):
                        for b in range(a + 1):
                            yield [i + 1, j + 1, _f(z[a]), _f(z[b]), _f(K.values[i, j, a, b])]

        def canonical_rows():
            for (i, j) in sorted(solution.grids):
                grid = solution.grids[(i, j)]
                values = solution.G_nodes[(i, j)]
                for m, k in zip(*np.nonzero(grid.inside)):
                    yield [i + 1, j + 1, _f(grid.xi[m]), _f(grid.eta[k]), _f(values[m, k])]

        def coupling_rows():
            for (i, j) in sorted(A0_tilde):
                samples = np.asarray(A0_tilde[(i, j)](z), dtype=float) * np.ones_like(z)
                for a in range(z.size):
                    yield [i + 1, j + 1, _f(z[a]), _f(samples[a])]

        self._write_csv("K.csv", KERNEL_HEADER, kernel_rows())
        self._write_csv("G.csv", ["i", "j", "xi", "eta", "value"], canonical_rows())
        self._write_csv("A0_tilde.csv", ["i", "j", "z", "value"], coupling_rows())
        self._write_json("meta.json", meta)

    def load_kernel(self) -> KernelSamples:
        """
        Reload K.csv.

        Raises:
            RepositoryDataException: If the file is malformed
            RepositoryStorageException: If the file cannot be read
        """
        path = self.path("K.csv")
        try:
            with open(path, "r", newline="", encoding="utf-8") as f:
                rows = list(csv.reader(f))
        except OSError as e:
            raise RepositoryStorageException(f"Failed to read {path}: {e}")
        if not rows or rows[0] != KERNEL_HEADER:
            raise RepositoryDataException(f"{path} does not start with header {','.join(KERNEL_HEADER)}")
        try:
            ij = np.array([[int(r[0]), int(r[1])] for r in rows[1:]], dtype=int).reshape(-1, 2)
            data = np.array([[float(r[2]), float(r[3]), float(r[4])] for r in rows[1:]]).reshape(-1, 3)
        except (IndexError, ValueError) as e:
            raise RepositoryDataException(f"Malformed row in {path}: {e}")
        if ij.size == 0:
            raise RepositoryDataException(f"{path} holds no samples")

        z = np.unique(data[:, 0])
        n = int(ij.max())
        if ij.min() < 1 or not np.all(np.isin(data[:, 1], z)):
            raise RepositoryDataException(f"{path} is not sampled on a triangle of shared nodes")
        values = np.full((n, n, z.size, z.size), np.nan)
        a = np.searchsorted(z, data[:, 0])
        b = np.searchsorted(z, data[:, 1])
        if np.any(b > a):
            raise RepositoryDataException(f"{path} holds samples above the diagonal")
        values[ij[:, 0] - 1, ij[:, 1] - 1, a, b] = data[:, 2]
        logger.info(f"Loaded kernel with n = {n} on {z.size} nodes from {path}")
        return KernelSamples(z, values)

    # Gains, trajectories and reports

    def save_gain(self, gain: FeedbackGain) -> None:
        """Write gain_boundary.csv (i, j, value) and gain_kernel.csv (i, j, z, value)."""
        n = gain.n
        self._write_csv("gain_boundary.csv", ["i", "j", "value"],
                        ([i + 1, j + 1, _f(gain.k_boundary[i, j])] for i in range(n) for j in range(n)))
        self._write_csv("gain_kernel.csv", ["i", "j", "z", "value"],
                        ([i + 1, j + 1, _f(gain.z[a]), _f(gain.k_kernel[i, j, a])]
                         for i in range(n) for j in range(n) for a in range(gain.z.size)))

    def save_trajectory(self, trajectory: Trajectory) -> None:
        """Write trajectory.csv (t, channel, z, value), norms.csv and control.csv."""
        z = trajectory.z
        snaps = trajectory.snapshots

        def state_rows():
            for k, t in enumerate(trajectory.times):
                for c in range(snaps.shape[1]):
                    for a in range(z.size):
                        yield [_f(t), c + 1, _f(z[a]), _f(snaps[k, c, a])]

        self._write_csv("trajectory.csv", ["t", "channel", "z", "value"], state_rows())
        self._write_csv("norms.csv", ["t", "l2_norm"],
                        ([_f(t), _f(v)] for t, v in zip(trajectory.norm_times, trajectory.norm_series)))
        controls = trajectory.controls
        if controls.size:
            header: List[str] = ["t"] + [f"u{i + 1}" for i in range(controls.shape[1])]
            self._write_csv("control.csv", header,
                            ([_f(t)] + [_f(v) for v in u] for t, u in zip(trajectory.norm_times, controls)))

    def save_report(self, report: Dict[str, Any]) -> None:
        self._write_json("report.json", report)

    def save_eigenvalues(self, top_eigenvalues: Sequence[float], mu_max: float) -> None:
        """Write eigs.csv: one row per state and a final mu_max row."""
        rows = [[str(i + 1), _f(v)] for i, v in enumerate(top_eigenvalues)]
        rows.append(["mu_max", _f(mu_max)])
        self._write_csv("eigs.csv", ["state", "top_eigenvalue"], rows)
