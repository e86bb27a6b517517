"""
Config Repository Implementation

Concrete implementation of IConfigRepository for JSON documents whose
coefficient functions are written in the expression language of
backstepping.expressions.
"""

import json
import logging
import re
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from backstepping.exceptions import DimensionMismatch, ParseError
from backstepping.expressions import Expression, check_finite, parse_expression
from backstepping.model import PlantModel, TargetSpec, boundary_matrices

from .interfaces import (
    ConfigDocument,
    IConfigRepository,
    RepositoryStorageException,
    SimSettings,
    SolverSettings,
)

logger = logging.getLogger(__name__)

PLANT_KEYS = {
    "n", "m", "lambda", "lambda_d1", "lambda_d2", "phi_conv", "phi_conv_d1",
    "A", "A0", "F", "Q0", "B0_1", "B0_0", "B1_1", "B1_0",
}
TARGET_KEYS = {"mu_c", "Bt1_1", "Bt1_0", "g_f"}
SOLVER_KEYS = {"grid_n", "tol", "max_iter"}
SIM_KEYS = {"n_z", "t_end", "dt", "x0"}


class JsonConfigRepository(IConfigRepository):
    """
    Reads run configurations from JSON files.

    Coefficients may be numbers or expression strings. Missing derivative
    entries are derived symbolically from the parsed expressions.

    Example:
        repo = JsonConfigRepository()
        doc = repo.parse_config("configs/coupled_example.json")
        print(doc.plant.n, doc.target.mu_c)
    """

    def __init__(self):
        self._path: Optional[str] = None
        self._text = ""

    def parse_config(self, path: str) -> ConfigDocument:
        """
        Read and validate a configuration document.

        Args:
            path: Location of the JSON document

        Returns:
            ConfigDocument with every expression parsed and checked for finite values

        Raises:
            ParseError: If the JSON or an expression is malformed
            DimensionMismatch: If matrix sizes disagree with n
            ExpressionDomainError: If an expression is not finite on [0, 1]
            RepositoryStorageException: If the file cannot be read
        """
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            logger.error(f"Failed to read config {path}: {e}")
            raise RepositoryStorageException(f"Failed to read config {path}: {e}")
        return self.parse_text(text, path)

    def parse_text(self, text: str, path: Optional[str] = None) -> ConfigDocument:
        """Parse a configuration held in memory; `path` only labels errors."""
        self._path, self._text = path, text
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e.msg}", path, e.lineno, e.colno)
        if not isinstance(raw, dict) or "plant" not in raw or "target" not in raw:
            raise ParseError("document must be an object with 'plant' and 'target' blocks", path)
        for name, keys in (("plant", PLANT_KEYS), ("target", TARGET_KEYS),
                           ("solver", SOLVER_KEYS), ("sim", SIM_KEYS)):
            block = raw.get(name, {})
            if not isinstance(block, dict):
                raise ParseError(f"'{name}' must be an object", path, self._line_of(f'"{name}"'))
            unknown = sorted(set(block) - keys)
            if unknown:
                raise ParseError(f"unknown key {unknown[0]!r} in '{name}'", path, self._line_of(f'"{unknown[0]}"'))

        plant = self._parse_plant(raw["plant"])
        target = self._parse_target(raw["target"], plant.n)
        solver = self._parse_solver(raw.get("solver", {}))
        sim = self._parse_sim(raw.get("sim", {}), plant.n)
        logger.info(f"Parsed config {path or '<memory>'}: n = {plant.n}, m = {plant.m}, mu_c = {target.mu_c}")
        return ConfigDocument(plant, target, solver, sim, path)

    # Helpers

    def _line_of(self, needle: str) -> Optional[int]:
        index = self._text.find(needle)
        return self._text.count("\n", 0, index) + 1 if index >= 0 else None

    def _expr(self, value: Any, what: str, variables: Sequence[str] = ("z",)) -> Expression:
        needle = json.dumps(value) if isinstance(value, str) else None
        line = self._line_of(needle) if needle else None
        expr = parse_expression(value, variables, self._path, line)
        check_finite(expr, what)
        return expr

    def _vector(self, block: Dict[str, Any], key: str, n: int, required: bool = True) -> Optional[List[Any]]:
        if key not in block:
            if required:
                raise ParseError(f"missing '{key}'", self._path)
            return None
        value = block[key]
        if not isinstance(value, list) or len(value) != n:
            raise DimensionMismatch(f"'{key}' must be a list of {n} entries")
        return value

    def _matrix(self, block: Dict[str, Any], key: str, n: int, default: Any = None) -> List[List[Any]]:
        if key not in block:
            if default is None:
                raise ParseError(f"missing '{key}'", self._path)
            return [[default] * n for _ in range(n)]
        value = block[key]
        if not isinstance(value, list) or len(value) != n or any(
                not isinstance(row, list) or len(row) != n for row in value):
            raise DimensionMismatch(f"'{key}' must be a {n}x{n} matrix")
        return value

    def _numbers(self, values: Sequence[Any], key: str) -> np.ndarray:
        try:
            return np.array([float(v) for v in values], dtype=float)
        except (TypeError, ValueError):
            raise ParseError(f"'{key}' must hold numbers", self._path, self._line_of(f'"{key}"'))

    def _functions(self, values: Optional[Sequence[Any]], key: str) -> Optional[Tuple[Expression, ...]]:
        if values is None:
            return None
        return tuple(self._expr(v, f"{key}[{i + 1}]") for i, v in enumerate(values))

    # Blocks

    def _parse_plant(self, block: Dict[str, Any]) -> PlantModel:
        n = block.get("n")
        if not isinstance(n, int) or isinstance(n, bool) or n < 1:
            raise ParseError("'n' must be a positive integer", self._path, self._line_of('"n"'))

        lambdas = self._functions(self._vector(block, "lambda", n), "lambda")
        d1 = self._functions(self._vector(block, "lambda_d1", n, required=False), "lambda_d1")
        d2 = self._functions(self._vector(block, "lambda_d2", n, required=False), "lambda_d2")
        if d1 is None:
            d1 = tuple(f.derivative("z") for f in lambdas)
        if d2 is None:
            d2 = tuple(f.derivative("z") for f in d1)
        phi = self._functions(self._vector(block, "phi_conv", n, required=False), "phi_conv")
        phi_d1 = self._functions(self._vector(block, "phi_conv_d1", n, required=False), "phi_conv_d1")
        if phi is not None and phi_d1 is None:
            phi_d1 = tuple(f.derivative("z") for f in phi)

        A = tuple(tuple(self._expr(v, f"A[{i + 1}][{j + 1}]") for j, v in enumerate(row))
                  for i, row in enumerate(self._matrix(block, "A", n, 0)))
        A0 = tuple(tuple(self._expr(v, f"A0[{i + 1}][{j + 1}]") for j, v in enumerate(row))
                   for i, row in enumerate(self._matrix(block, "A0", n, 0)))
        F = tuple(tuple(self._expr(v, f"F[{i + 1}][{j + 1}]", ("z", "zeta")) for j, v in enumerate(row))
                  for i, row in enumerate(self._matrix(block, "F", n, 0)))

        if "B0_1" in block or "B0_0" in block:
            if "m" in block or "Q0" in block:
                raise ParseError("give either 'm' and 'Q0' or 'B0_1' and 'B0_0'", self._path, self._line_of('"B0_'))
            B0_1 = np.array([self._numbers(r, "B0_1") for r in self._matrix(block, "B0_1", n)])
            B0_0 = np.array([self._numbers(r, "B0_0") for r in self._matrix(block, "B0_0", n)])
        else:
            m = block.get("m")
            if not isinstance(m, int) or isinstance(m, bool) or not 0 <= m <= n:
                raise ParseError(f"'m' must be an integer in [0, {n}]", self._path, self._line_of('"m"'))
            q = block.get("Q0", [])
            if not isinstance(q, list):
                raise ParseError("'Q0' must be a list", self._path, self._line_of('"Q0"'))
            B0_1, B0_0 = boundary_matrices(n, m, self._numbers(q, "Q0"))

        B1_1 = self._numbers(self._vector(block, "B1_1", n), "B1_1")
        B1_0 = np.array([self._numbers(r, "B1_0") for r in self._matrix(block, "B1_0", n)])
        return PlantModel(n=n, lambdas=lambdas, A=A, A0=A0, F=F, B0_1=B0_1, B0_0=B0_0, B1_1=B1_1, B1_0=B1_0,
                          phi_conv=phi, lambda_d1=d1, lambda_d2=d2, phi_conv_d1=phi_d1)

    def _parse_target(self, block: Dict[str, Any], n: int) -> TargetSpec:
        mu_c = block.get("mu_c")
        if not isinstance(mu_c, (int, float)) or isinstance(mu_c, bool):
            raise ParseError("'mu_c' must be a number", self._path, self._line_of('"mu_c"'))
        b1 = self._numbers(self._vector(block, "Bt1_1", n), "Bt1_1")
        b0 = self._numbers(self._vector(block, "Bt1_0", n), "Bt1_0")
        g_f = {}
        raw_gf = block.get("g_f", {})
        if not isinstance(raw_gf, dict):
            raise ParseError("'g_f' must map \"i,j\" to expressions", self._path, self._line_of('"g_f"'))
        for key, value in sorted(raw_gf.items()):
            match = re.fullmatch(r"\s*(\d+)\s*,\s*(\d+)\s*", key)
            if not match:
                raise ParseError(f"g_f key {key!r} is not of the form \"i,j\"", self._path,
                                 self._line_of(json.dumps(key)))
            i, j = int(match.group(1)) - 1, int(match.group(2)) - 1
            if not (0 <= i < n and 0 <= j < n):
                raise DimensionMismatch(f"g_f pair {key!r} outside 1..{n}")
            g_f[(i, j)] = self._expr(value, f"g_f[{key}]", ("eta",))
        return TargetSpec(float(mu_c), b1, b0, g_f)

    def _parse_solver(self, block: Dict[str, Any]) -> SolverSettings:
        settings = SolverSettings()
        try:
            settings.grid_n = int(block.get("grid_n", settings.grid_n))
            settings.tol = float(block.get("tol", settings.tol))
            settings.max_iter = int(block.get("max_iter", settings.max_iter))
        except (TypeError, ValueError) as e:
            raise ParseError(f"invalid solver setting: {e}", self._path, self._line_of('"solver"'))
        return settings

    def _parse_sim(self, block: Dict[str, Any], n: int) -> SimSettings:
        settings = SimSettings()
        try:
            settings.n_z = int(block.get("n_z", settings.n_z))
            settings.t_end = float(block.get("t_end", settings.t_end))
            settings.dt = float(block.get("dt", settings.dt))
        except (TypeError, ValueError) as e:
            raise ParseError(f"invalid sim setting: {e}", self._path, self._line_of('"sim"'))
        x0 = self._vector(block, "x0", n, required=False)
        if x0 is not None:
            settings.x0 = self._functions(x0, "x0")
        return settings
