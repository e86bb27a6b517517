"""
State Feedback

Assembles the boundary feedback u(t) = K[x(t)] from the kernel traces at
z = 1 and the target boundary conditions, and evaluates it on sampled states.

Channels whose target condition at z = 1 is Dirichlet substitute x_i(1) by
the transformation itself; the others substitute the derivative x_i'(1)
obtained by differentiating the transformation in z.
"""

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .exceptions import GridMismatch, MissingKernelTrace
from .kernel import KernelTable
from .model import ConvectionWeight, PlantModel, TargetSpec
from .numerics import GridFn1D

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeedbackGain:
    """
    u = k_boundary x(1) + int_0^1 k_kernel(zeta) x(zeta) dzeta.

    Attributes:
        z: Quadrature nodes of the kernel part (the simulator grid)
        k_boundary: (n, n) matrix acting on x(1)
        k_kernel: (n, n, len(z)) samples of the kernel part
        dirichlet_target: True for channels with a Dirichlet target condition at z = 1
    """
    z: np.ndarray
    k_boundary: np.ndarray
    k_kernel: np.ndarray
    dirichlet_target: np.ndarray

    @property
    def n(self) -> int:
        return self.k_boundary.shape[0]

    def kernel_row(self, i: int) -> List[GridFn1D]:
        return [GridFn1D(self.z, self.k_kernel[i, j]) for j in range(self.n)]

    def permuted(self, order: Sequence[int]) -> "FeedbackGain":
        """
        Gain in the original state order, for a gain designed on states
        reordered so that new state k is old state order[k].
        """
        inv = np.argsort(np.asarray(order))
        return replace(
            self,
            k_boundary=self.k_boundary[np.ix_(inv, inv)],
            k_kernel=self.k_kernel[np.ix_(inv, inv)],
            dirichlet_target=self.dirichlet_target[inv],
        )

    def compose_weight(self, weight: ConvectionWeight) -> "FeedbackGain":
        """Gain acting on x for a gain designed on the rescaled state W(z) x."""
        if weight.is_identity:
            return self
        w1 = weight.diag(self.n, 1.0)
        wz = weight.diag(self.n, self.z)
        return replace(self, k_boundary=self.k_boundary * w1[None, :], k_kernel=self.k_kernel * wz[None, :, :])


def _z_slope_at_one(K: KernelTable) -> np.ndarray:
    """Backward second-order d/dz K(1, zeta_b) per element, read from the sheet owning (1, zeta_b)."""
    n, n_z = K.n, K.z.size
    b = np.arange(n_z)
    top = np.full(n_z, n_z - 1)
    out = np.zeros((n, n, n_z))
    for i in range(n):
        for j in range(n):
            v = [K.sheet_slice(i, j, (top, b), (top - q, b)) for q in range(3)]
            out[i, j] = (3 * v[0] - 4 * v[1] + v[2]) / (2 * K.h)
    return out


def build_gain(K: KernelTable, plant: PlantModel, target: TargetSpec,
               z: Optional[np.ndarray] = None) -> FeedbackGain:
    """
    Feedback gain of a converged kernel.

    Args:
        K: Kernel of the (normalized) plant
        plant: Plant the kernel was designed for
        target: Target whose conditions at z = 1 are imposed
        z: Quadrature nodes of the gain (default: the kernel nodes)

    Returns:
        FeedbackGain on the plant's state order

    Raises:
        MissingKernelTrace: If K(1, .) or its z derivative is not available
    """
    n = plant.n
    z = K.z if z is None else np.asarray(z, dtype=float)
    r = target.ratio()
    dirichlet = target.dirichlet_target.copy()
    b11 = np.asarray(plant.B1_1, dtype=float)

    trace = np.array([[K.sheet_slice(i, j, (np.full(K.z.size, K.z.size - 1), np.arange(K.z.size)),
                                     (np.full(K.z.size, K.z.size - 1), np.arange(K.z.size)))
                       for j in range(n)] for i in range(n)])
    slope = _z_slope_at_one(K)
    if not (np.all(np.isfinite(trace)) and np.all(np.isfinite(slope))):
        raise MissingKernelTrace("kernel trace at z = 1 has undefined samples")

    corner = trace[:, :, -1]
    D = corner - np.diag(r)
    M = np.asarray(plant.B1_0, dtype=float) + b11[:, None] * D
    R = b11[:, None, None] * (slope + r[:, None, None] * trace)
    # Dirichlet target states at z = 1 are themselves given by the transformation
    for j in np.flatnonzero(dirichlet):
        R += M[:, j][:, None, None] * trace[j][None, :, :]
        M[:, j] = 0.0

    k_kernel = np.array([[GridFn1D(K.z, R[i, j])(z) for j in range(n)] for i in range(n)])
    if not np.all(np.isfinite(k_kernel)):
        raise MissingKernelTrace("kernel part of the gain is not finite")
    logger.info(f"Built feedback gain: boundary part {np.array2string(M, precision=4)}, "
                f"Dirichlet target channels {[int(i) + 1 for i in np.flatnonzero(dirichlet)]}")
    return FeedbackGain(z, M, k_kernel, dirichlet)


def eval_control(gain: FeedbackGain, state: np.ndarray) -> np.ndarray:
    """
    Control value for a sampled state of shape (n, len(gain.z)).

    Raises:
        GridMismatch: If the state is not sampled on the gain nodes
    """
    state = np.asarray(state, dtype=float)
    if state.shape != (gain.n, gain.z.size):
        raise GridMismatch(f"state of shape {state.shape} does not match gain grid ({gain.n}, {gain.z.size})")
    return gain.k_boundary @ state[:, -1] + trapezoid(np.einsum("ijz,jz->iz", gain.k_kernel, state), gain.z, axis=1)
