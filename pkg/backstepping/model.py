"""
Plant and Target Models

Validated descriptions of the coupled parabolic PIDE plant and of the
target system the backstepping transformation maps it to, together with
the normalizations applied before kernel design: state reordering so that
Dirichlet conditions at z = 0 come first, and the exponential state
rescaling that removes convection terms.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .exceptions import (
    ActuationRowZero,
    CoupledLeftBC,
    DiffusionCoefficientsTouch,
    DiffusionNotPositive,
    DimensionMismatch,
    MalformedBC,
    TargetMismatch,
)
from .numerics import GridFn1D

logger = logging.getLogger(__name__)

Fn = Callable[[np.ndarray], np.ndarray]
Fn2 = Callable[[np.ndarray, np.ndarray], np.ndarray]
Pair = Tuple[int, int]

SAMPLE_POINTS = 1001
DEFAULT_EPS_SEP = 1e-6


def zero_fn(z: np.ndarray) -> np.ndarray:
    return np.zeros_like(np.asarray(z, dtype=float))


def zero_fn2(z: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    return np.zeros(np.broadcast(np.asarray(z), np.asarray(zeta)).shape)


def constant_fn(value: float) -> Fn:
    def fn(z):
        return np.full(np.shape(z), float(value))
    return fn


def boundary_matrices(n: int, m: int, q: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Boundary operator matrices at z = 0 for m Dirichlet and n - m Robin rows.

    Returns:
        (B0_1, B0_0) with B0_1 = diag(0_m, I_p) and B0_0 = diag(I_m, Q0)
    """
    q = np.asarray(q, dtype=float).ravel()
    if q.size != n - m:
        raise DimensionMismatch(f"Q0 has {q.size} entries, expected {n - m}")
    B0_1 = np.diag(np.concatenate((np.zeros(m), np.ones(n - m))))
    B0_0 = np.diag(np.concatenate((np.ones(m), q)))
    return B0_1, B0_0


@dataclass(frozen=True)
class PlantModel:
    """
    Coupled linear parabolic PIDE plant.

        x_t = Lambda x_zz + Phi x_z + A x + A0 x(0) + int_0^z F(z, zeta) x(zeta) dzeta
        B0_1 x_z(0) + B0_0 x(0) = 0
        diag(B1_1) x_z(1) + B1_0 x(1) = u

    Coefficient functions are evaluable callables; matrices are indexed
    [row][column]. States are indexed from 0.
    """
    n: int
    lambdas: Tuple[Fn, ...]
    A: Tuple[Tuple[Fn, ...], ...]
    A0: Tuple[Tuple[Fn, ...], ...]
    F: Tuple[Tuple[Fn2, ...], ...]
    B0_1: np.ndarray
    B0_0: np.ndarray
    B1_1: np.ndarray
    B1_0: np.ndarray
    phi_conv: Optional[Tuple[Fn, ...]] = None
    lambda_d1: Optional[Tuple[Fn, ...]] = None
    lambda_d2: Optional[Tuple[Fn, ...]] = None
    phi_conv_d1: Optional[Tuple[Fn, ...]] = None

    @property
    def dirichlet_left(self) -> np.ndarray:
        """True for states with a Dirichlet condition at z = 0."""
        return np.all(self.B0_1 == 0, axis=1)

    @property
    def m(self) -> int:
        return int(np.count_nonzero(self.dirichlet_left))

    @property
    def p(self) -> int:
        return self.n - self.m

    @property
    def q(self) -> np.ndarray:
        """Robin coefficients of the last p states."""
        return np.diag(self.B0_0)[self.m:].copy()

    @property
    def Q0(self) -> np.ndarray:
        return np.diag(self.q)

    def q_of(self, j: int) -> float:
        return float(self.B0_0[j, j]) if j >= self.m else 0.0

    @property
    def has_convection(self) -> bool:
        if self.phi_conv is None:
            return False
        z = np.linspace(0.0, 1.0, SAMPLE_POINTS)
        return any(np.any(np.asarray(f(z)) != 0) for f in self.phi_conv)

    def lam(self, i: int, z) -> np.ndarray:
        return np.asarray(self.lambdas[i](z), dtype=float)

    def lam_d1(self, i: int, z) -> np.ndarray:
        return np.asarray(self.lambda_d1[i](z), dtype=float)

    def lam_d2(self, i: int, z) -> np.ndarray:
        return np.asarray(self.lambda_d2[i](z), dtype=float)

    def matrix(self, fns: Sequence[Sequence[Fn]], z) -> np.ndarray:
        """Evaluate a matrix of functions of z; result shape (n, n) + shape(z)."""
        return np.array([[np.asarray(f(z), dtype=float) * np.ones(np.shape(z)) for f in row] for row in fns])

    def kernel_matrix(self, z, zeta) -> np.ndarray:
        shape = np.broadcast(np.asarray(z), np.asarray(zeta)).shape
        return np.array([[np.asarray(f(z, zeta), dtype=float) * np.ones(shape) for f in row] for row in self.F])


@dataclass(frozen=True)
class TargetSpec:
    """
    Target system: x~_t = Lambda x~_zz - mu_c x~ - A0~ (coupling at z = 0),
    with decoupled boundary conditions Bt1_1 x~_z(1) + Bt1_0 x~(1) = 0.

    g_f holds the artificial boundary functions of eta for pairs with
    lambda_i < lambda_j; missing pairs default to zero.
    """
    mu_c: float
    Bt1_1: np.ndarray
    Bt1_0: np.ndarray
    g_f: Dict[Pair, Fn] = field(default_factory=dict)

    @property
    def dirichlet_target(self) -> np.ndarray:
        return np.asarray(self.Bt1_1) == 0

    def ratio(self) -> np.ndarray:
        """Bt1_0 / Bt1_1 for Robin target rows, 0 for Dirichlet rows."""
        b1 = np.asarray(self.Bt1_1, dtype=float)
        b0 = np.asarray(self.Bt1_0, dtype=float)
        return np.divide(b0, b1, out=np.zeros_like(b0), where=b1 != 0)

    def artificial_bc(self, i: int, j: int) -> Fn:
        return self.g_f.get((i, j), zero_fn)

    def permuted(self, order: Sequence[int]) -> "TargetSpec":
        """Target for states reordered so that new state k is old state order[k]."""
        order = np.asarray(order)
        position = np.argsort(order)
        g_f = {(int(position[i]), int(position[j])): fn for (i, j), fn in self.g_f.items()}
        return replace(self, Bt1_1=np.asarray(self.Bt1_1)[order], Bt1_0=np.asarray(self.Bt1_0)[order], g_f=g_f)

    def with_mu_c(self, mu_c: float) -> "TargetSpec":
        return replace(self, mu_c=float(mu_c))


# Finite-difference derivatives

def _fd_first(f: np.ndarray, h: float) -> np.ndarray:
    d = np.empty_like(f)
    d[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
    d[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * h)
    d[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * h)
    d[-1] = (25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]) / (12 * h)
    d[-2] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12 * h)
    return d


def _fd_second(f: np.ndarray, h: float) -> np.ndarray:
    d = np.empty_like(f)
    h2 = 12 * h * h
    d[2:-2] = (-f[:-4] + 16 * f[1:-3] - 30 * f[2:-2] + 16 * f[3:-1] - f[4:]) / h2
    d[0] = (45 * f[0] - 154 * f[1] + 214 * f[2] - 156 * f[3] + 61 * f[4] - 10 * f[5]) / h2
    d[1] = (10 * f[0] - 15 * f[1] - 4 * f[2] + 14 * f[3] - 6 * f[4] + f[5]) / h2
    d[-1] = (45 * f[-1] - 154 * f[-2] + 214 * f[-3] - 156 * f[-4] + 61 * f[-5] - 10 * f[-6]) / h2
    d[-2] = (10 * f[-1] - 15 * f[-2] - 4 * f[-3] + 14 * f[-4] - 6 * f[-5] + f[-6]) / h2
    return d


def fd_derivatives(fn: Fn, n_points: int = SAMPLE_POINTS) -> Tuple[GridFn1D, GridFn1D]:
    """Fourth-order finite-difference first and second derivatives on [0, 1]."""
    z = np.linspace(0.0, 1.0, n_points)
    f = np.asarray(fn(z), dtype=float) * np.ones_like(z)
    h = z[1] - z[0]
    return GridFn1D(z, _fd_first(f, h)), GridFn1D(z, _fd_second(f, h))


# Validation

def _check_shapes(plant: PlantModel) -> None:
    n = plant.n
    if n < 1:
        raise DimensionMismatch("state dimension must be at least 1")
    if len(plant.lambdas) != n:
        raise DimensionMismatch(f"{len(plant.lambdas)} diffusion coefficients for n = {n}")
    for name in ("A", "A0", "F"):
        rows = getattr(plant, name)
        if len(rows) != n or any(len(r) != n for r in rows):
            raise DimensionMismatch(f"{name} must be {n}x{n}")
    for name in ("B0_1", "B0_0", "B1_0"):
        if np.shape(getattr(plant, name)) != (n, n):
            raise MalformedBC(f"{name} must be {n}x{n}, got {np.shape(getattr(plant, name))}")
    if np.shape(plant.B1_1) != (n,):
        raise MalformedBC(f"B1_1 must hold {n} diagonal entries")
    for name in ("phi_conv", "lambda_d1", "lambda_d2", "phi_conv_d1"):
        fns = getattr(plant, name)
        if fns is not None and len(fns) != n:
            raise DimensionMismatch(f"{name} must have {n} entries")


def _check_left_bc(plant: PlantModel) -> None:
    m = plant.m
    expected_1, expected_0 = boundary_matrices(plant.n, m, np.diag(plant.B0_0)[m:])
    dirichlet = plant.dirichlet_left
    if not (np.all(dirichlet[:m]) and not np.any(dirichlet[m:])):
        raise MalformedBC("Dirichlet conditions at z = 0 must come first")
    if not (np.array_equal(plant.B0_1, expected_1) and np.array_equal(plant.B0_0, expected_0)):
        raise MalformedBC("boundary operator at z = 0 must be diag(0, I) x_z + diag(I, Q0) x")


def validate_plant(raw: PlantModel, eps_sep: float = DEFAULT_EPS_SEP) -> PlantModel:
    """
    Check the plant assumptions and fill in derivative functions.

    Args:
        raw: Plant with normalized boundary operators at z = 0
        eps_sep: Minimal admissible gap between two diffusion coefficients

    Returns:
        Plant with lambda_d1, lambda_d2, phi_conv and phi_conv_d1 populated

    Raises:
        DiffusionNotPositive: If some lambda_i(z) <= 0
        DiffusionCoefficientsTouch: If two coefficients come closer than eps_sep
            or change order on [0, 1]
        MalformedBC: If the boundary matrices at z = 0 are not in normal form
        ActuationRowZero: If an input channel has no effect
    """
    _check_shapes(raw)
    n = raw.n
    z = np.linspace(0.0, 1.0, SAMPLE_POINTS)
    lam = np.array([raw.lam(i, z) * np.ones_like(z) for i in range(n)])
    for i in range(n):
        if not np.all(np.isfinite(lam[i])) or np.any(lam[i] <= 0):
            k = int(np.argmin(np.where(np.isfinite(lam[i]), lam[i], -np.inf)))
            raise DiffusionNotPositive(f"lambda_{i + 1}({z[k]:.3f}) = {lam[i][k]:.6g} is not positive")
    for i in range(n):
        for j in range(i + 1, n):
            gap = lam[i] - lam[j]
            if np.min(np.abs(gap)) < eps_sep or (np.any(gap > 0) and np.any(gap < 0)):
                raise DiffusionCoefficientsTouch(
                    f"lambda_{i + 1} and lambda_{j + 1} are not separated "
                    f"(min gap {np.min(np.abs(gap)):.3g} < {eps_sep:.3g} or order changes)")
    _check_left_bc(raw)
    for i in range(n):
        if abs(raw.B1_1[i]) + np.linalg.norm(raw.B1_0[i]) == 0:
            raise ActuationRowZero(f"input channel {i + 1} acts on no state")

    d1, d2 = raw.lambda_d1, raw.lambda_d2
    if d1 is None or d2 is None:
        logger.warning("Diffusion derivatives not supplied, using finite differences")
        fd = [fd_derivatives(f) for f in raw.lambdas]
        d1 = d1 if d1 is not None else tuple(p[0] for p in fd)
        d2 = d2 if d2 is not None else tuple(p[1] for p in fd)
    phi = raw.phi_conv if raw.phi_conv is not None else tuple(zero_fn for _ in range(n))
    phi_d1 = raw.phi_conv_d1
    if phi_d1 is None:
        phi_d1 = tuple(zero_fn if f is zero_fn else fd_derivatives(f)[0] for f in phi)
    logger.debug(f"Validated plant with n = {n}, m = {raw.m}")
    return replace(raw, lambda_d1=tuple(d1), lambda_d2=tuple(d2), phi_conv=tuple(phi), phi_conv_d1=tuple(phi_d1))


def validate_target(target: TargetSpec, plant: PlantModel) -> TargetSpec:
    """
    Check a target against the (normalized) plant.

    Raises:
        DimensionMismatch: If the target vectors do not have n entries
        TargetMismatch: If a target row is empty, its type disagrees with the
            actuation type, or an artificial boundary function is given for a
            pair with lambda_i >= lambda_j
    """
    n = plant.n
    b1 = np.asarray(target.Bt1_1, dtype=float)
    b0 = np.asarray(target.Bt1_0, dtype=float)
    if b1.shape != (n,) or b0.shape != (n,):
        raise DimensionMismatch(f"target boundary coefficients must have {n} entries")
    for i in range(n):
        if abs(b1[i]) + abs(b0[i]) == 0:
            raise TargetMismatch(f"target boundary condition {i + 1} is empty")
        if (plant.B1_1[i] == 0) != (b1[i] == 0):
            raise TargetMismatch(
                f"channel {i + 1}: plant actuation and target condition at z = 1 must both be Dirichlet or both not")
    for (i, j) in target.g_f:
        if not (0 <= i < n and 0 <= j < n):
            raise DimensionMismatch(f"artificial boundary function for unknown pair ({i + 1}, {j + 1})")
        if plant.lam(i, 0.5) >= plant.lam(j, 0.5):
            raise TargetMismatch(f"artificial boundary function given for pair ({i + 1}, {j + 1}) with lambda_i > lambda_j")
    return replace(target, Bt1_1=b1, Bt1_0=b0)


# Convection elimination

@dataclass(frozen=True)
class ConvectionWeight:
    """
    Diagonal weight W(z) = exp(omega(z)), omega_i = 1/2 int_0^z Phi_i / lambda_i.

    The convection-free state is W(z) x(z).
    """
    omega: Optional[Tuple[GridFn1D, ...]] = None

    @property
    def is_identity(self) -> bool:
        return self.omega is None

    def __call__(self, z) -> np.ndarray:
        """Diagonal entries, shape (n,) + shape(z); ones for the identity weight."""
        if self.omega is None:
            raise ValueError("identity weight has no dimension; use diag(n, z)")
        return np.array([np.exp(w(z)) for w in self.omega])

    def diag(self, n: int, z) -> np.ndarray:
        if self.omega is None:
            return np.ones((n,) + np.shape(z))
        return self(z)


def eliminate_convection(plant: PlantModel) -> Tuple[PlantModel, ConvectionWeight]:
    """
    Remove the convection term by the state rescaling x_check = W(z) x.

    Returns:
        (plant without convection, weight W). Plants without convection are
        returned unchanged with the identity weight.
    """
    if not plant.has_convection:
        return plant, ConvectionWeight()
    n = plant.n
    nodes = np.linspace(0.0, 1.0, 4 * SAMPLE_POINTS - 3)
    omega = []
    for i in range(n):
        ratio = plant.phi_conv[i](nodes) / plant.lam(i, nodes)
        omega.append(GridFn1D(nodes, 0.5 * cumulative_trapezoid(ratio, nodes, initial=0.0)))
    omega = tuple(omega)
    weight = ConvectionWeight(omega)

    def shift(i: int) -> Fn:
        def fn(z):
            lam, phi = plant.lam(i, z), plant.phi_conv[i](z)
            return (-phi ** 2 / (4 * lam) - plant.phi_conv_d1[i](z) / 2
                    + phi * plant.lam_d1(i, z) / (2 * lam))
        return fn

    def scaled(f: Fn, i: int, j: int, diagonal: Optional[Fn]) -> Fn:
        def fn(z):
            out = np.exp(omega[i](z) - omega[j](z)) * f(z)
            return out + diagonal(z) if diagonal is not None else out
        return fn

    def scaled_local(f: Fn, i: int) -> Fn:
        def fn(z):
            return np.exp(omega[i](z)) * f(z)
        return fn

    def scaled_kernel(f: Fn2, i: int, j: int) -> Fn2:
        def fn(z, zeta):
            return np.exp(omega[i](z) - omega[j](zeta)) * f(z, zeta)
        return fn

    A = tuple(tuple(scaled(plant.A[i][j], i, j, shift(i) if i == j else None) for j in range(n)) for i in range(n))
    A0 = tuple(tuple(scaled_local(plant.A0[i][j], i) for j in range(n)) for i in range(n))
    F = tuple(tuple(scaled_kernel(plant.F[i][j], i, j) for j in range(n)) for i in range(n))

    B0_0 = plant.B0_0.copy()
    for j in range(plant.m, n):
        B0_0[j, j] -= float(plant.phi_conv[j](0.0)) / (2.0 * float(plant.lam(j, 0.0)))
    w1_inv = np.exp(-np.array([float(w(1.0)) for w in omega]))
    slope1 = np.array([float(plant.phi_conv[i](1.0)) / (2.0 * float(plant.lam(i, 1.0))) for i in range(n)])
    B1_1 = plant.B1_1 * w1_inv
    B1_0 = plant.B1_0 * w1_inv[None, :] - np.diag(B1_1 * slope1)

    zeros = tuple(zero_fn for _ in range(n))
    logger.info(f"Eliminated convection, weight at z = 1: {1.0 / w1_inv}")
    return replace(plant, A=A, A0=A0, F=F, B0_0=B0_0, B1_1=B1_1, B1_0=B1_0,
                   phi_conv=zeros, phi_conv_d1=zeros), weight


# Reordering

def permute_plant(plant: PlantModel, order: Sequence[int]) -> PlantModel:
    """Plant with states reordered so that new state k is old state order[k]."""
    o = [int(k) for k in order]

    def vec(fns):
        return None if fns is None else tuple(fns[k] for k in o)

    def mat(fns):
        return tuple(tuple(fns[a][b] for b in o) for a in o)

    idx = np.asarray(o)
    return replace(
        plant,
        lambdas=vec(plant.lambdas), A=mat(plant.A), A0=mat(plant.A0), F=mat(plant.F),
        B0_1=plant.B0_1[np.ix_(idx, idx)], B0_0=plant.B0_0[np.ix_(idx, idx)],
        B1_1=np.asarray(plant.B1_1)[idx], B1_0=plant.B1_0[np.ix_(idx, idx)],
        phi_conv=vec(plant.phi_conv), lambda_d1=vec(plant.lambda_d1),
        lambda_d2=vec(plant.lambda_d2), phi_conv_d1=vec(plant.phi_conv_d1),
    )


def reorder_dirichlet_first(plant: PlantModel) -> Tuple[PlantModel, np.ndarray]:
    """
    Normalize the boundary conditions at z = 0 and order Dirichlet states first.

    Each row of (B0_1, B0_0) must act on a single state. Dirichlet rows are
    scaled to x_j(0) = 0 and Robin rows to x_j'(0) + q_j x_j(0) = 0.

    Returns:
        (reordered plant, perm) where new state k is old state perm[k]

    Raises:
        CoupledLeftBC: If a row mixes several states
        MalformedBC: If a row is empty or a state has no (or two) conditions
    """
    n = plant.n
    B1 = np.asarray(plant.B0_1, dtype=float)
    B0 = np.asarray(plant.B0_0, dtype=float)
    if B1.shape != (n, n) or B0.shape != (n, n):
        raise MalformedBC(f"boundary matrices at z = 0 must be {n}x{n}")
    owner = np.full(n, -1)
    robin_q = np.zeros(n)
    dirichlet = np.zeros(n, dtype=bool)
    for r in range(n):
        cols = np.flatnonzero((B1[r] != 0) | (B0[r] != 0))
        if cols.size == 0:
            raise MalformedBC(f"boundary condition {r + 1} at z = 0 is empty")
        if cols.size > 1:
            raise CoupledLeftBC(f"boundary condition {r + 1} at z = 0 couples states {[int(c) + 1 for c in cols]}")
        c = int(cols[0])
        if owner[c] >= 0:
            raise MalformedBC(f"state {c + 1} has two boundary conditions at z = 0")
        owner[c] = r
        if B1[r, c] == 0:
            dirichlet[c] = True
        else:
            robin_q[c] = B0[r, c] / B1[r, c]

    perm = np.array(sorted(range(n), key=lambda k: (not dirichlet[k], k)))
    m = int(np.count_nonzero(dirichlet))
    B0_1, B0_0 = boundary_matrices(n, m, robin_q[perm][m:])
    reordered = permute_plant(replace(plant, B0_1=np.eye(n), B0_0=np.eye(n)), perm)
    if not np.array_equal(perm, np.arange(n)):
        logger.info(f"Reordered states to {[int(k) + 1 for k in perm]} (Dirichlet first)")
    return replace(reordered, B0_1=B0_1, B0_0=B0_0), perm


def sorted_pairs(n: int) -> List[Pair]:
    return [(i, j) for i in range(n) for j in range(n)]
