"""
Coefficient Expressions

Parses the small arithmetic language used for coefficient functions in
configuration documents and turns each parsed tree into a vectorized
numpy evaluator. Grammar: decimal literals, pi, the variables z, zeta and
eta, unary minus, + - * / ^ and the functions sin, cos, exp, sqrt and log.
"""

import logging
import re
from dataclasses import dataclass, field
from functools import cached_property
from tokenize import TokenError
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import sympy as sp
from sympy.core.function import AppliedUndef
from sympy.parsing.sympy_parser import (
    convert_xor,
    parse_expr,
    standard_transformations,
)

from .exceptions import ExpressionDomainError, ParseError

logger = logging.getLogger(__name__)

VARIABLES = ("z", "zeta", "eta")
FUNCTIONS = ("sin", "cos", "exp", "sqrt", "log")
SAMPLE_POINTS = 101

_SYMBOLS = {name: sp.Symbol(name, real=True) for name in VARIABLES}
_LOCALS = {
    **_SYMBOLS,
    "pi": sp.pi,
    "sin": sp.sin,
    "cos": sp.cos,
    "exp": sp.exp,
    "sqrt": sp.sqrt,
    "log": sp.log,
}
# Only the number constructors parse_expr emits; no builtins reach eval.
_GLOBALS = {
    "Integer": sp.Integer,
    "Float": sp.Float,
    "Rational": sp.Rational,
    "Symbol": sp.Symbol,
    "Function": sp.Function,
    "__builtins__": {},
}
_TRANSFORMATIONS = standard_transformations + (convert_xor,)


@dataclass(frozen=True)
class Expression:
    """
    Parsed coefficient expression.

    Calling it broadcasts its arguments, so constants evaluate to arrays of
    the argument shape.

    Attributes:
        source: Original text
        tree: Parsed sympy expression
        variables: Names of the positional arguments, in order
    """
    source: str
    tree: sp.Expr
    variables: Tuple[str, ...] = ("z",)
    path: Optional[str] = field(default=None, compare=False)

    @cached_property
    def _fn(self) -> Callable:
        args = [_SYMBOLS[name] for name in self.variables]
        return sp.lambdify(args, self.tree, modules="numpy")

    def __call__(self, *args) -> np.ndarray:
        arrays = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in args])
        with np.errstate(all="ignore"):
            out = np.asarray(self._fn(*arrays), dtype=float)
        if out.shape != arrays[0].shape:
            out = np.broadcast_to(out, arrays[0].shape).copy()
        return out

    def derivative(self, variable: str = "z") -> "Expression":
        """Symbolic derivative with respect to one of the variables."""
        tree = sp.diff(self.tree, _SYMBOLS[variable])
        return Expression(f"d/d{variable}({self.source})", tree, self.variables, self.path)

    @property
    def is_zero(self) -> bool:
        return bool(self.tree == 0)


def parse_expression(text: str, variables: Sequence[str] = ("z",),
                     path: Optional[str] = None, line: Optional[int] = None) -> Expression:
    """
    Parse one coefficient expression.

    Args:
        text: Expression source, e.g. "0.5 - 0.25*sin(2*pi*z)"
        variables: Variables the expression may use
        path: Document path, used for error locations
        line: Document line of the expression, used for error locations

    Returns:
        Parsed Expression

    Raises:
        ParseError: On syntax errors, unknown identifiers or unknown functions
    """
    if not isinstance(text, (str, int, float)) or isinstance(text, bool):
        raise ParseError(f"expected an expression string, got {type(text).__name__}", path, line)
    source = str(text)
    try:
        tree = parse_expr(source, local_dict=dict(_LOCALS), global_dict=dict(_GLOBALS),
                          transformations=_TRANSFORMATIONS, evaluate=True)
    except (SyntaxError, TokenError, TypeError, AttributeError, NameError) as e:
        raise ParseError(f"cannot parse expression {source!r}: {e}", path, line)

    if not isinstance(tree, sp.Expr):
        raise ParseError(f"expression {source!r} is not arithmetic", path, line)

    undefined = tree.atoms(AppliedUndef)
    if undefined:
        name = sorted(str(f.func) for f in undefined)[0]
        raise ParseError(f"unknown function {name!r} in {source!r}", path, line, _column(source, name))

    allowed = {_SYMBOLS[name] for name in variables}
    unknown = sorted(str(s) for s in tree.free_symbols if s not in allowed)
    if unknown:
        name = unknown[0]
        raise ParseError(f"unknown identifier {name!r} in {source!r}", path, line, _column(source, name))

    return Expression(source, tree, tuple(variables), path)


def _column(source: str, name: str) -> Optional[int]:
    match = re.search(rf"\b{re.escape(name)}\b", source)
    return match.start() + 1 if match else None


def check_finite(expr: Expression, what: str = "expression") -> None:
    """
    Evaluate an expression on a uniform grid over [0, 1] in every variable.

    Raises:
        ExpressionDomainError: If any sampled value is not finite
    """
    grid = np.linspace(0.0, 1.0, SAMPLE_POINTS)
    if len(expr.variables) == 1:
        values = expr(grid)
    else:
        mesh = np.meshgrid(*([grid] * len(expr.variables)), indexing="ij")
        values = expr(*mesh)
    bad = ~np.isfinite(values)
    if np.any(bad):
        where = np.argwhere(bad)[0]
        point = ", ".join(f"{name}={grid[k]:.3g}" for name, k in zip(expr.variables, where))
        raise ExpressionDomainError(f"{what} {expr.source!r} is not finite at {point}")
    logger.debug(f"Checked {what} {expr.source!r} on {values.size} points")


def constant(value: float, variables: Sequence[str] = ("z",)) -> Expression:
    """Expression for a numeric constant."""
    return Expression(repr(float(value)), sp.Float(value) if value else sp.Integer(0), tuple(variables))
