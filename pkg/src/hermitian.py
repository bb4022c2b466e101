"""
Hermitian linear-algebra helpers shared by channel estimation and decoding.

All solves go through linear systems rather than explicit inverses. A ridge of
RIDGE_SCALE * trace/dim is added whenever the condition number exceeds
RIDGE_CONDITION.
"""

import logging

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

RIDGE_CONDITION = 1e12
RIDGE_SCALE = 1e-12


def hermitize(matrix: np.ndarray) -> np.ndarray:
    """Symmetrize the last two axes: (A + A^H) / 2."""
    return 0.5 * (matrix + np.conj(np.swapaxes(matrix, -1, -2)))


def psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """
    Hermitian square root of a (batch of) PSD matrices.

    Negative eigenvalues produced by round-off are clamped at zero.
    """
    eigvals, eigvecs = np.linalg.eigh(hermitize(matrix))
    roots = np.sqrt(np.clip(eigvals, 0.0, None))
    return (eigvecs * roots[..., None, :]) @ np.conj(np.swapaxes(eigvecs, -1, -2))


def regularize(matrix: np.ndarray, label: str = "matrix") -> np.ndarray:
    """Add a trace-scaled ridge to every ill-conditioned matrix of the batch."""
    dim = matrix.shape[-1]
    cond = np.linalg.cond(matrix)
    bad = ~np.isfinite(cond) | (cond > RIDGE_CONDITION)
    if not np.any(bad):
        return matrix

    trace = np.real(np.trace(matrix, axis1=-2, axis2=-1))
    ridge = RIDGE_SCALE * np.abs(trace) / dim
    ridge = np.where(ridge > 0, ridge, RIDGE_SCALE)
    logger.warning(
        f"Ridge-regularized {int(np.sum(bad))} ill-conditioned {label} "
        f"(condition > {RIDGE_CONDITION:.0e})"
    )
    eye = np.eye(dim, dtype=matrix.dtype)
    return matrix + np.where(bad, ridge, 0.0)[..., None, None] * eye


def hermitian_solve(matrix: np.ndarray, rhs: np.ndarray, label: str = "matrix") -> np.ndarray:
    """Solve A x = b for a single Hermitian A."""
    matrix = regularize(hermitize(matrix), label)
    return scipy.linalg.solve(matrix, rhs, assume_a="her")


def batched_solve(matrix: np.ndarray, rhs: np.ndarray, label: str = "matrix") -> np.ndarray:
    """Solve A x = b over leading batch axes (rhs shaped [..., dim, cols])."""
    matrix = regularize(hermitize(matrix), label)
    return np.linalg.solve(matrix, rhs)


def batched_inverse(matrix: np.ndarray, label: str = "matrix") -> np.ndarray:
    """Inverse over leading batch axes, regularized like batched_solve."""
    dim = matrix.shape[-1]
    eye = np.broadcast_to(np.eye(dim, dtype=complex), matrix.shape)
    return hermitize(batched_solve(matrix, eye, label))
