"""
Grid Function Numerics

Sampled-function machinery used by every other module: monotone cubic 1-D
interpolation, piecewise bilinear 2-D interpolation with two sheets split by
a separation level, composite trapezoid quadrature, inversion of monotone
tabulations, ghost-node extension operators and decay-rate fitting.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import PchipInterpolator
from scipy.sparse import coo_matrix, csr_matrix

from .exceptions import (
    GridMismatch,
    NonPositiveNorm,
    NotMonotone,
    OutOfRange,
    OutsideDomain,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]
Level = Callable[[np.ndarray, np.ndarray], np.ndarray]

CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class GridFn1D:
    """
    Function sampled on strictly increasing nodes.

    Evaluation uses a monotonicity-preserving cubic (PCHIP) interpolant, so
    monotone data stays monotone and kinks do not overshoot.

    Example:
        f = GridFn1D(np.linspace(0, 1, 51), np.sin(np.linspace(0, 1, 51)))
        f(0.3)
    """
    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise GridMismatch("GridFn1D needs at least two nodes")
        if values.shape != nodes.shape:
            raise GridMismatch(f"{values.shape[0] if values.ndim else 0} values for {nodes.size} nodes")
        if np.any(np.diff(nodes) <= 0):
            raise NotMonotone("GridFn1D nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    @cached_property
    def interpolant(self) -> PchipInterpolator:
        return PchipInterpolator(self.nodes, self.values, extrapolate=True)

    @cached_property
    def slope(self) -> PchipInterpolator:
        return self.interpolant.derivative()

    def __call__(self, x: ArrayLike) -> ArrayLike:
        return interp1(self, x)

    def derivative(self, x: ArrayLike) -> ArrayLike:
        """First derivative of the interpolant at x (clamped like interp1)."""
        x_arr = _clamp(self, x)
        out = self.slope(x_arr)
        return float(out) if np.ndim(x) == 0 else out

    @property
    def span(self) -> Tuple[float, float]:
        return float(self.nodes[0]), float(self.nodes[-1])


def _clamp(f: GridFn1D, x: ArrayLike, tol: float = CLAMP_TOL) -> np.ndarray:
    x_arr = np.asarray(x, dtype=float)
    lo, hi = f.nodes[0], f.nodes[-1]
    slack = tol * max(1.0, hi - lo)
    if np.any(x_arr < lo - slack) or np.any(x_arr > hi + slack) or np.any(np.isnan(x_arr)):
        bad = x_arr[(x_arr < lo - slack) | (x_arr > hi + slack) | np.isnan(x_arr)]
        raise OutOfRange(f"abscissa {bad.ravel()[0]!r} outside [{lo}, {hi}]")
    return np.clip(x_arr, lo, hi)


def interp1(f: GridFn1D, x: ArrayLike, tol: float = CLAMP_TOL) -> ArrayLike:
    """
    Evaluate a tabulated function.

    Args:
        f: Tabulated function
        x: Scalar or array abscissa, clamped when within tol of the interval

    Returns:
        Interpolated value(s); node abscissae return the stored sample exactly

    Raises:
        OutOfRange: If x lies outside the interval by more than tol
    """
    x_arr = _clamp(f, x, tol)
    out = np.asarray(f.interpolant(x_arr), dtype=float)
    idx = np.clip(np.searchsorted(f.nodes, x_arr), 0, f.nodes.size - 1)
    hit = f.nodes[idx] == x_arr
    out = np.where(hit, f.values[idx], out)
    return float(out) if np.ndim(x) == 0 else out


def trapz(f: Union[GridFn1D, Callable[[np.ndarray], np.ndarray]], a: float, b: float,
          n_sub: int = 1000) -> float:
    """
    Composite trapezoid integral of f over [a, b].

    Tabulated functions are integrated over their own nodes inside (a, b)
    plus the two interpolated end points; callables use n_sub uniform
    subintervals.
    """
    if b < a:
        raise OutOfRange(f"trapz needs a <= b, got [{a}, {b}]")
    if a == b:
        return 0.0
    if isinstance(f, GridFn1D):
        inner = f.nodes[(f.nodes > a) & (f.nodes < b)]
        x = np.concatenate(([a], inner, [b]))
        return float(trapezoid(interp1(f, x), x))
    x = np.linspace(a, b, n_sub + 1)
    y = np.asarray(f(x), dtype=float) * np.ones_like(x)
    return float(trapezoid(y, x))


def invert_monotone(f: GridFn1D, y: ArrayLike, tol: float = 1e-12,
                    max_iter: int = 60) -> ArrayLike:
    """
    Solve interp1(f, x) = y for x when f is strictly increasing.

    A bracketing interval from the tabulation is refined by Newton steps on
    the interpolant, falling back to bisection whenever a step leaves the
    bracket.

    Args:
        f: Strictly increasing tabulated function
        y: Target value(s) in [f.values[0], f.values[-1]]

    Returns:
        Abscissa(e) x with |f(x) - y| below tol

    Raises:
        NotMonotone: If the tabulated values are not strictly increasing
        OutOfRange: If y is outside the range of f
    """
    values, nodes = f.values, f.nodes
    if np.any(np.diff(values) <= 0):
        raise NotMonotone("cannot invert a function that is not strictly increasing")
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    slack = CLAMP_TOL * max(1.0, values[-1] - values[0])
    if np.any(y_arr < values[0] - slack) or np.any(y_arr > values[-1] + slack) or np.any(np.isnan(y_arr)):
        raise OutOfRange(f"value outside range [{values[0]}, {values[-1]}] of the inverted function")
    y_arr = np.clip(y_arr, values[0], values[-1])

    k = np.clip(np.searchsorted(values, y_arr, side="right") - 1, 0, values.size - 2)
    lo = nodes[k].copy()
    hi = nodes[k + 1].copy()
    t = (y_arr - values[k]) / (values[k + 1] - values[k])
    x = lo + t * (hi - lo)
    fn, dfn = f.interpolant, f.slope
    for _ in range(max_iter):
        r = fn(x) - y_arr
        done = np.abs(r) < tol
        if np.all(done):
            break
        hi = np.where(r > 0, x, hi)
        lo = np.where(r < 0, x, lo)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = x - r / dfn(x)
        ok = np.isfinite(step) & (step > lo) & (step < hi)
        x = np.where(done, x, np.where(ok, step, 0.5 * (lo + hi)))

    exact = values[k] == y_arr
    x = np.where(exact, nodes[k], x)
    x = np.where(y_arr == values[-1], nodes[-1], x)
    return float(x[0]) if np.ndim(y) == 0 else x.reshape(np.shape(y))


def fit_decay_rate(times: np.ndarray, norms: np.ndarray, skip_fraction: float = 0.2) -> float:
    """
    Least-squares exponential decay rate of a norm series.

    The first skip_fraction of the time span is dropped as transient and a
    line is fitted to log(norm) against time. Positive rates mean decay.

    Raises:
        NonPositiveNorm: If a norm sample is not strictly positive
        GridMismatch: If the series lengths differ or fewer than 10 samples remain
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(norms, dtype=float)
    if t.shape != v.shape:
        raise GridMismatch(f"{t.size} times for {v.size} norm samples")
    if np.any(~(v > 0)):
        raise NonPositiveNorm("norm samples must be strictly positive to fit a decay rate")
    start = t[0] + skip_fraction * (t[-1] - t[0])
    keep = t >= start
    if np.count_nonzero(keep) < 10:
        raise GridMismatch("at least 10 samples are needed after the transient window")
    slope, _ = np.polyfit(t[keep], np.log(v[keep]), 1)
    return float(-slope)


# Two-dimensional grid functions

def bilinear(axis1: np.ndarray, axis2: np.ndarray, values: np.ndarray,
             a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """
    Bilinear interpolation on uniform axes.

    Points outside the box (beyond tol) or touching a NaN corner give NaN.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    h1 = axis1[1] - axis1[0]
    h2 = axis2[1] - axis2[0]
    u = (a - axis1[0]) / h1
    w = (b - axis2[0]) / h2
    n1, n2 = axis1.size, axis2.size
    outside = (u < -tol) | (u > n1 - 1 + tol) | (w < -tol) | (w > n2 - 1 + tol) | np.isnan(u) | np.isnan(w)
    u = np.clip(np.nan_to_num(u), 0.0, n1 - 1.0)
    w = np.clip(np.nan_to_num(w), 0.0, n2 - 1.0)
    i = np.minimum(np.floor(u).astype(int), n1 - 2)
    k = np.minimum(np.floor(w).astype(int), n2 - 2)
    tu = u - i
    tw = w - k
    out = ((1 - tu) * (1 - tw) * values[i, k] + tu * (1 - tw) * values[i + 1, k]
           + (1 - tu) * tw * values[i, k + 1] + tu * tw * values[i + 1, k + 1])
    # exact corner hits avoid 0 * NaN from neighbours that are never used
    on_node = (tu == 0) & (tw == 0)
    out = np.where(on_node, values[i, k], out)
    return np.where(outside, np.nan, out)


@dataclass(frozen=True)
class PiecewiseGridFn2D:
    """
    Function on a 2-D region that is continuous but only piecewise smooth.

    Values live on two sheets sampled on the same uniform axes: `above`
    holds the piece where the separation level is >= 0, `below` the piece
    where it is < 0. Each sheet carries extrapolated ghost values a few
    nodes past its own piece so bilinear cells never mix the two pieces.

    Attributes:
        axis1, axis2: Uniform node coordinates
        above, below: Sheet samples, NaN where unavailable
        mask: True at nodes inside the region
        separation: Level function of (a, b); None means a single piece
        region: Optional predicate of (a, b) marking valid query points
    """
    axis1: np.ndarray
    axis2: np.ndarray
    above: np.ndarray
    below: np.ndarray
    mask: np.ndarray
    separation: Optional[Level] = None
    region: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def level(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.separation is None:
            return np.zeros(np.broadcast(np.asarray(a), np.asarray(b)).shape)
        return np.asarray(self.separation(a, b), dtype=float)

    def node_values(self) -> np.ndarray:
        """Samples at the nodes, taken from the sheet each node belongs to."""
        A, B = np.meshgrid(self.axis1, self.axis2, indexing="ij")
        side = self.level(A, B) >= 0
        out = np.where(side, self.above, self.below)
        return np.where(self.mask, out, np.nan)

    def __call__(self, a: ArrayLike, b: ArrayLike, side_hint: str = "auto") -> ArrayLike:
        return interp2(self, (a, b), side_hint)


def interp2(f: PiecewiseGridFn2D, pt: Tuple[ArrayLike, ArrayLike], side_hint: str = "auto") -> ArrayLike:
    """
    Bilinear evaluation on the sheet selected by side_hint.

    Args:
        f: Piecewise grid function
        pt: Query point(s) (a, b)
        side_hint: 'above', 'below' or 'auto' (sign of the separation level)

    Returns:
        Interpolated value(s)

    Raises:
        OutsideDomain: If a point is outside the region or its cell lacks samples
    """
    a = np.asarray(pt[0], dtype=float)
    b = np.asarray(pt[1], dtype=float)
    a, b = np.broadcast_arrays(a, b)
    if side_hint == "auto":
        side = f.level(a, b) >= 0
    elif side_hint == "above":
        side = np.ones(a.shape, dtype=bool)
    elif side_hint == "below":
        side = np.zeros(a.shape, dtype=bool)
    else:
        raise ValueError(f"unknown side hint {side_hint!r}")
    if f.region is not None and not np.all(f.region(a, b)):
        raise OutsideDomain("query point outside the region of the grid function")
    up = bilinear(f.axis1, f.axis2, f.above, a, b)
    lo = bilinear(f.axis1, f.axis2, f.below, a, b)
    out = np.where(side, up, lo)
    if np.any(np.isnan(out)):
        raise OutsideDomain("query point has no samples on the selected sheet")
    return float(out) if out.ndim == 0 else out


# Ghost-node extension

_DIRECTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def _combine(rows: List[Dict[int, float]], weights: List[float]) -> Dict[int, float]:
    out: Dict[int, float] = {}
    for row, w in zip(rows, weights):
        for col, v in row.items():
            out[col] = out.get(col, 0.0) + w * v
    return out


def extension_operator(known: np.ndarray, layers: int = 3) -> Tuple[csr_matrix, np.ndarray]:
    """
    Linear operator filling ghost nodes around a set of known nodes.

    Each layer assigns every unknown node next to the filled set the mean of
    its linear extrapolations 2*f(p+d) - f(p+2d) over the four axis
    directions; when no direction offers two filled nodes it copies the
    mean of its filled neighbours.

    Args:
        known: Boolean node mask of the samples that are given
        layers: Number of ghost layers

    Returns:
        (E, reached): E maps flattened samples to flattened extended samples
        (identity on known nodes); reached marks nodes E defines
    """
    n1, n2 = known.shape
    rows: Dict[int, Dict[int, float]] = {int(p): {int(p): 1.0} for p in np.flatnonzero(known)}
    reached = known.copy()
    for _ in range(layers):
        grown = np.zeros_like(reached)
        grown[1:, :] |= reached[:-1, :]
        grown[:-1, :] |= reached[1:, :]
        grown[:, 1:] |= reached[:, :-1]
        grown[:, :-1] |= reached[:, 1:]
        candidates = np.argwhere(grown & ~reached)
        if candidates.size == 0:
            break
        fresh: Dict[int, Dict[int, float]] = {}
        for a, b in candidates:
            lines, copies = [], []
            for da, db in _DIRECTIONS:
                a1, b1 = a + da, b + db
                if not (0 <= a1 < n1 and 0 <= b1 < n2) or not reached[a1, b1]:
                    continue
                near = rows[a1 * n2 + b1]
                a2, b2 = a + 2 * da, b + 2 * db
                if 0 <= a2 < n1 and 0 <= b2 < n2 and reached[a2, b2]:
                    lines.append(_combine([near, rows[a2 * n2 + b2]], [2.0, -1.0]))
                else:
                    copies.append(near)
            chosen = lines or copies
            fresh[int(a * n2 + b)] = _combine(chosen, [1.0 / len(chosen)] * len(chosen))
        rows.update(fresh)
        for p in fresh:
            reached[p // n2, p % n2] = True

    size = n1 * n2
    r_idx, c_idx, data = [], [], []
    for r, row in rows.items():
        for c, v in row.items():
            r_idx.append(r)
            c_idx.append(c)
            data.append(v)
    E = coo_matrix((data, (r_idx, c_idx)), shape=(size, size)).tocsr()
    return E, reached


def ghost_fill(values: np.ndarray, known: np.ndarray, layers: int = 3) -> np.ndarray:
    """Extend known samples by extrapolated ghost layers; other nodes become NaN."""
    E, reached = extension_operator(known, layers)
    flat = np.where(known, values, 0.0).ravel()
    out = (E @ flat).reshape(values.shape)
    return np.where(reached, out, np.nan)


def factorial_log(l: int) -> float:
    return math.lgamma(l + 1.0)
