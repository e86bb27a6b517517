"""
Method-of-Lines Simulation

Finite-difference semi-discretization of the plant and of the target
system, implicit time integration with algebraic boundary rows, Volterra
transforms of trajectories and estimation of the decay bound mu_max of the
target operator.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.integrate import trapezoid
from scipy.sparse import diags, lil_matrix
from scipy.sparse.linalg import splu

from .exceptions import EigSolveFailed, GridTooCoarse, StepRejected
from .feedback import FeedbackGain, eval_control
from .kernel import KernelTable
from .model import ConvectionWeight, PlantModel, TargetSpec

logger = logging.getLogger(__name__)

MIN_NODES = 11
EIG_NODES = 801


@dataclass(frozen=True)
class SemiDiscreteSystem:
    """
    Semi-discrete descriptor system  E x' = J x + U u.

    The state stacks the node values of every component, component-major.
    Rows flagged `algebraic` are boundary conditions (E row zero); U feeds
    the inputs into the boundary rows at z = 1.
    """
    z: np.ndarray
    n: int
    operator: np.ndarray
    algebraic: np.ndarray
    inputs: np.ndarray

    @property
    def n_z(self) -> int:
        return self.z.size

    def interior_operator(self) -> np.ndarray:
        """Dynamics restricted to interior nodes with the boundary rows eliminated (u = 0)."""
        alg = self.algebraic
        J = self.operator
        Jii, Jib = J[np.ix_(~alg, ~alg)], J[np.ix_(~alg, alg)]
        Jbi, Jbb = J[np.ix_(alg, ~alg)], J[np.ix_(alg, alg)]
        return Jii - Jib @ np.linalg.solve(Jbb, Jbi)


def _trapezoid_weights(z: np.ndarray) -> np.ndarray:
    """W[a, b]: trapezoid weights of node b for the integral over [0, z_a]."""
    h = z[1] - z[0]
    A, B = np.meshgrid(np.arange(z.size), np.arange(z.size), indexing="ij")
    W = np.where((B <= A) & (A > 0), h, 0.0)
    return np.where(((B == 0) | (B == A)) & (A > 0), 0.5 * h, W)


def _assemble(z: np.ndarray, lam: np.ndarray, conv: np.ndarray, reaction: np.ndarray,
              coupling0: np.ndarray, coupling0_d: np.ndarray, integral: Optional[np.ndarray],
              left_dirichlet: np.ndarray, q: np.ndarray, b1: np.ndarray, b0: np.ndarray) -> SemiDiscreteSystem:
    """
    Shared assembly of plant and target dynamics.

    coupling0 acts on x(0), coupling0_d on the one-sided x'(0); b1 is the
    diagonal and b0 the full matrix of the boundary operator at z = 1.
    """
    n, N = lam.shape
    h = z[1] - z[0]
    size = n * N
    J = np.zeros((size, size))
    algebraic = np.zeros(size, dtype=bool)
    U = np.zeros((size, n))
    row = np.arange(1, N - 1)

    def at(i: int, a) -> np.ndarray:
        return i * N + np.asarray(a)

    d0 = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    W = _trapezoid_weights(z) if integral is not None else None
    for i in range(n):
        r = at(i, row)
        J[r, at(i, row - 1)] += lam[i, row] / h ** 2 - conv[i, row] / (2 * h)
        J[r, at(i, row)] += -2 * lam[i, row] / h ** 2
        J[r, at(i, row + 1)] += lam[i, row] / h ** 2 + conv[i, row] / (2 * h)
        for j in range(n):
            J[r, at(j, row)] += reaction[i, j, row]
            J[r, at(j, 0)] += coupling0[i, j, row]
            for q_idx in range(3):
                J[r, at(j, q_idx)] += coupling0_d[i, j, row] * d0[q_idx]
            if integral is not None:
                J[np.ix_(r, at(j, np.arange(N)))] += W[row] * integral[i, j][row]

        left, right = at(i, 0), at(i, N - 1)
        algebraic[[left, right]] = True
        if left_dirichlet[i]:
            J[left, left] = 1.0
        else:
            J[left, at(i, np.arange(3))] = d0
            J[left, left] += q[i]
        J[right, at(i, [N - 3, N - 2, N - 1])] = b1[i] * np.array([1.0, -4.0, 3.0]) / (2 * h)
        for j in range(n):
            J[right, at(j, N - 1)] += b0[i, j]
        U[right, i] = 1.0
    return SemiDiscreteSystem(z, n, J, algebraic, U)


def discretize(plant: PlantModel, n_z: int = 102) -> SemiDiscreteSystem:
    """
    Finite-difference semi-discretization of the plant on n_z uniform nodes.

    Raises:
        GridTooCoarse: If n_z < 11
    """
    if n_z < MIN_NODES:
        raise GridTooCoarse(f"simulation grid needs at least {MIN_NODES} nodes, got {n_z}")
    n = plant.n
    z = np.linspace(0.0, 1.0, n_z)
    lam = np.array([plant.lam(i, z) * np.ones_like(z) for i in range(n)])
    conv = np.zeros_like(lam) if plant.phi_conv is None else np.array(
        [np.asarray(f(z), dtype=float) * np.ones_like(z) for f in plant.phi_conv])
    F = plant.kernel_matrix(z[:, None], z[None, :])
    integral = None if not np.any(F) else F
    system = _assemble(z, lam, conv, plant.matrix(plant.A, z), plant.matrix(plant.A0, z), np.zeros((n, n, n_z)),
                       integral, plant.dirichlet_left, np.diag(plant.B0_0) * ~plant.dirichlet_left,
                       np.asarray(plant.B1_1, dtype=float), np.asarray(plant.B1_0, dtype=float))
    logger.debug(f"Discretized plant with n = {n} on {n_z} nodes")
    return system


def discretize_target(plant: PlantModel, target: TargetSpec, A0_tilde: dict, n_z: int = 102) -> SemiDiscreteSystem:
    """
    Semi-discretization of the target system of a normalized plant:
    x~_t = Lambda x~_zz - mu_c x~ - A0~ (x~_z(0) on Dirichlet, x~(0) on Robin columns).
    """
    if n_z < MIN_NODES:
        raise GridTooCoarse(f"simulation grid needs at least {MIN_NODES} nodes, got {n_z}")
    n = plant.n
    z = np.linspace(0.0, 1.0, n_z)
    lam = np.array([plant.lam(i, z) * np.ones_like(z) for i in range(n)])
    reaction = np.zeros((n, n, n_z))
    reaction[np.arange(n), np.arange(n)] = -target.mu_c
    c0 = np.zeros((n, n, n_z))
    c0d = np.zeros((n, n, n_z))
    dirichlet = plant.dirichlet_left
    for (i, j), f in A0_tilde.items():
        if dirichlet[j]:
            c0d[i, j] = -f(z)
        else:
            c0[i, j] = -f(z)
    return _assemble(z, lam, np.zeros_like(lam), reaction, c0, c0d, None, dirichlet,
                     np.diag(plant.B0_0) * ~dirichlet, np.asarray(target.Bt1_1, dtype=float),
                     np.diag(np.asarray(target.Bt1_0, dtype=float)))


# Time integration

@dataclass
class Trajectory:
    """
    Simulated trajectory.

    Attributes:
        z: Simulator nodes
        times: Times of the stored snapshots
        snapshots: (len(times), n, n_z) state samples
        l2_norms: L2 norm of each stored snapshot
        norm_times, norm_series: L2 norm at every time step
        controls: (len(norm_times), n) inputs applied from each step on
    """
    z: np.ndarray
    times: np.ndarray
    snapshots: np.ndarray
    l2_norms: np.ndarray
    norm_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    norm_series: np.ndarray = field(default_factory=lambda: np.zeros(0))
    controls: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))


def l2_norm(z: np.ndarray, state: np.ndarray) -> float:
    return float(np.sqrt(trapezoid(np.sum(state ** 2, axis=0), z)))


def _factor(system: SemiDiscreteSystem, scale: float, dt: float):
    eye = np.eye(system.operator.shape[0])
    lhs = np.where(system.algebraic[:, None], system.operator, scale * eye - dt * system.operator)
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            lu = scipy.linalg.lu_factor(lhs)
        except (scipy.linalg.LinAlgWarning, np.linalg.LinAlgError, ValueError) as e:
            raise StepRejected(f"implicit step matrix is singular: {e}")
    if np.any(np.diag(lu[0]) == 0):
        raise StepRejected("implicit step matrix is singular")
    return lu


def simulate(system: SemiDiscreteSystem, x0: np.ndarray, t_end: float, dt: float,
             gain: Optional[FeedbackGain] = None, save_every: int = 1) -> Trajectory:
    """
    Integrate the semi-discrete system from x0.

    The first step is implicit Euler, the following ones second-order BDF;
    boundary rows are imposed at every step. With a gain, the input of each
    step is evaluated from the state at the start of the step; without one
    the input is zero.

    Args:
        system: Semi-discrete plant or target
        x0: (n, n_z) initial samples
        t_end: Final time
        dt: Step size
        gain: Optional state feedback on the simulator nodes
        save_every: Store every save_every-th snapshot

    Raises:
        StepRejected: If a step matrix is singular or the state blows up
    """
    n, N = system.n, system.n_z
    x = np.asarray(x0, dtype=float).reshape(n * N).copy()
    steps = int(round(t_end / dt))
    lu1 = _factor(system, 1.0, dt)
    lu2 = _factor(system, 1.5, dt) if steps > 1 else None
    alg = system.algebraic

    def control(state: np.ndarray) -> np.ndarray:
        if gain is None:
            return np.zeros(n)
        return eval_control(gain, state.reshape(n, N))

    times, snaps = [0.0], [x.reshape(n, N).copy()]
    norm_times, norms, controls = [0.0], [l2_norm(system.z, x.reshape(n, N))], []
    prev = None
    for k in range(steps):
        u = control(x)
        controls.append(u)
        boundary = system.inputs @ u
        if prev is None:
            rhs = np.where(alg, boundary, x)
            nxt = scipy.linalg.lu_solve(lu1, rhs)
        else:
            rhs = np.where(alg, boundary, 2.0 * x - 0.5 * prev)
            nxt = scipy.linalg.lu_solve(lu2, rhs)
        if not np.all(np.isfinite(nxt)):
            raise StepRejected(f"state is not finite after step {k + 1}")
        prev, x = x, nxt
        t = (k + 1) * dt
        norm_times.append(t)
        norms.append(l2_norm(system.z, x.reshape(n, N)))
        if (k + 1) % save_every == 0 or k + 1 == steps:
            times.append(t)
            snaps.append(x.reshape(n, N).copy())
    controls.append(control(x))
    snapshots = np.array(snaps)
    logger.info(f"Simulated {steps} steps to t = {steps * dt:.4g}: "
                f"norm {norms[0]:.4g} -> {norms[-1]:.4g}")
    return Trajectory(system.z, np.array(times), snapshots,
                      np.array([l2_norm(system.z, s) for s in snapshots]),
                      np.array(norm_times), np.array(norms), np.array(controls))


def sample_profiles(fns: Sequence, z: np.ndarray) -> np.ndarray:
    return np.array([np.asarray(f(z), dtype=float) * np.ones_like(z) for f in fns])


# Transforms

def resample_kernel(table: KernelTable, z: np.ndarray) -> np.ndarray:
    """Kernel samples (n, n, len(z), len(z)) on another uniform grid, zero above the diagonal."""
    n = table.n
    Zg, ZETAg = np.meshgrid(z, z, indexing="ij")
    tri = ZETAg <= Zg
    out = np.zeros((n, n, z.size, z.size))
    for (i, j), piece in table.pieces.items():
        out[i, j][tri] = piece(Zg[tri], ZETAg[tri])
    return out


def transform_trajectory(traj: Trajectory, table: KernelTable, direction: str = "forward",
                         weight: Optional[ConvectionWeight] = None,
                         order: Optional[Sequence[int]] = None) -> Trajectory:
    """
    Apply the backstepping transformation to every snapshot.

    forward:  x~ = W x[order] - int_0^z K x   (physical state to target state)
    inverse:  x = (x~ + int_0^z L x~) / W, back in the original order

    Args:
        traj: Trajectory to transform
        table: K for forward, L for inverse
        direction: 'forward' or 'inverse'
        weight: Convection weight of the normalization (identity if omitted)
        order: State order of the normalization (identity if omitted)
    """
    if direction not in ("forward", "inverse"):
        raise ValueError(f"unknown direction {direction!r}")
    z = traj.z
    n = traj.snapshots.shape[1]
    weight = weight if weight is not None else ConvectionWeight()
    order = np.arange(n) if order is None else np.asarray(order)
    inv = np.argsort(order)
    Wz = weight.diag(n, z)
    T = resample_kernel(table, z)
    Wq = _trapezoid_weights(z)
    sign = -1.0 if direction == "forward" else 1.0

    out = []
    for snap in traj.snapshots:
        y = Wz * snap[order] if direction == "forward" else snap
        y = y + sign * np.einsum("ab,ijab,jb->ia", Wq, T, y)
        out.append(y if direction == "forward" else (y / Wz)[inv])
    snapshots = np.array(out)
    norms = np.array([l2_norm(z, s) for s in snapshots])
    return Trajectory(z, traj.times.copy(), snapshots, norms, traj.times.copy(), norms.copy())


# Eigenvalue estimate

def _scalar_operator(lam: np.ndarray, h: float, left_dirichlet: bool, q: float, b1: float, b0: float):
    """Interior finite-difference matrix of lambda(z) d^2/dz^2 with both boundary nodes eliminated."""
    N = lam.size
    m = N - 2
    main = -2 * lam[1:-1] / h ** 2
    off = lam[1:-1] / h ** 2
    A = lil_matrix(diags([off[1:], main, off[:-1]], [-1, 0, 1], shape=(m, m)))
    # x0 = c1 x1 + c2 x2 from the left condition
    if left_dirichlet:
        c1, c2 = 0.0, 0.0
    else:
        c1, c2 = 4.0 / (3.0 - 2 * h * q), -1.0 / (3.0 - 2 * h * q)
    A[0, 0] += off[0] * c1
    A[0, 1] += off[0] * c2
    # xN = d1 x_{N-1} + d2 x_{N-2} from the right condition
    if b1 == 0:
        d1, d2 = 0.0, 0.0
    else:
        den = 3 * b1 + 2 * h * b0
        d1, d2 = 4 * b1 / den, -b1 / den
    A[m - 1, m - 1] += off[-1] * d1
    A[m - 1, m - 2] += off[-1] * d2
    return A.tocsc()


def _top_eigenvalue(A, tol: float = 1e-12, max_iter: int = 500) -> float:
    """Largest real eigenvalue by shifted inverse iteration; dense fallback."""
    absA = abs(A)
    diag = A.diagonal()
    radius = np.asarray(absA.sum(axis=1)).ravel() - np.abs(diag)
    shift = float(np.max(diag + radius)) + 1.0
    logger.debug(f"Inverse iteration shift {shift:.6g}")
    m = A.shape[0]
    try:
        lu = splu((A - shift * diags(np.ones(m))).tocsc())
        v = np.ones(m) / np.sqrt(m)
        mu = np.nan
        for _ in range(max_iter):
            w = lu.solve(v)
            v_new = w / np.linalg.norm(w)
            rq = float(v_new @ (A @ v_new))
            if np.isfinite(mu) and abs(rq - mu) <= tol * max(1.0, abs(rq)):
                return rq
            mu, v = rq, v_new
        raise RuntimeError("inverse iteration did not converge")
    except (RuntimeError, ValueError) as e:
        logger.warning(f"Falling back to dense eigenvalue solver: {e}")
    try:
        values = scipy.linalg.eigvals(A.toarray())
    except (np.linalg.LinAlgError, ValueError) as e:
        raise EigSolveFailed(f"eigenvalue computation failed: {e}")
    if values.size == 0 or not np.all(np.isfinite(values)):
        raise EigSolveFailed("eigenvalue computation returned no finite values")
    return float(np.max(values.real))


def top_eigenvalues(plant: PlantModel, target: TargetSpec, n_nodes: int = EIG_NODES) -> List[float]:
    """
    Top eigenvalue of lambda_i d^2/dz^2 per state, with the plant condition
    at z = 0 and the target condition at z = 1.

    Raises:
        GridTooCoarse: If n_nodes < 11
        EigSolveFailed: If no eigenvalue can be computed
    """
    if n_nodes < MIN_NODES:
        raise GridTooCoarse(f"eigenvalue grid needs at least {MIN_NODES} nodes, got {n_nodes}")
    z = np.linspace(0.0, 1.0, n_nodes)
    h = z[1] - z[0]
    b1 = np.asarray(target.Bt1_1, dtype=float)
    b0 = np.asarray(target.Bt1_0, dtype=float)
    tops: List[float] = []
    for i in range(plant.n):
        lam = plant.lam(i, z) * np.ones_like(z)
        A = _scalar_operator(lam, h, bool(plant.dirichlet_left[i]), plant.q_of(i), b1[i], b0[i])
        tops.append(_top_eigenvalue(A))
    logger.info(f"Top eigenvalues per state: {np.round(tops, 5).tolist()}")
    return tops


def spectral_abscissa(system: SemiDiscreteSystem) -> float:
    """
    Largest real part over the eigenvalues of the uncontrolled dynamics.

    Raises:
        EigSolveFailed: If no eigenvalue can be computed
    """
    try:
        values = scipy.linalg.eigvals(system.interior_operator())
    except (np.linalg.LinAlgError, ValueError) as e:
        raise EigSolveFailed(f"eigenvalue computation failed: {e}")
    if values.size == 0 or not np.all(np.isfinite(values)):
        raise EigSolveFailed("eigenvalue computation returned no finite values")
    top = float(np.max(values.real))
    logger.debug(f"Spectral abscissa of the open loop on {system.n_z} nodes: {top:.5g}")
    return top


def estimate_mu_max(plant: PlantModel, target: TargetSpec, n_nodes: int = EIG_NODES) -> float:
    """Largest eigenvalue of the decoupled target operator with mu_c = 0."""
    return float(max(top_eigenvalues(plant, target, n_nodes)))

