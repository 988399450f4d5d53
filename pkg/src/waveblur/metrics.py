"""
Error measures and operation counts used to compare approximations.
"""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from skimage.metrics import peak_signal_noise_ratio

from .errors import BadShapeError
from .theta_builder import SparseTheta, ThetaMatrix
from .wavelet import WaveletBasis

logger = logging.getLogger(__name__)

POWER_METHOD_SEED = 0xC0FFEE


@dataclass(frozen=True)
class SpectralNormResult:
    """
    Outcome of a power iteration.

    Args:
        value: Estimated largest singular value.
        iterations: Iterations performed.
        converged: False when ``max_iter`` was reached first.
    """

    value: float
    iterations: int
    converged: bool

    def __float__(self) -> float:
        return self.value


def spectral_norm(
    apply: Callable[[np.ndarray], np.ndarray],
    adjoint: Callable[[np.ndarray], np.ndarray],
    shape: tuple[int, ...],
    *,
    tol: float = 1e-8,
    max_iter: int = 500,
    seed: int = POWER_METHOD_SEED,
) -> SpectralNormResult:
    """
    Largest singular value of a linear operator by power iteration on ``A^T A``.

    Iterates until the relative change of the eigenvalue estimate drops
    below ``tol``. The starting vector is drawn from a fixed seed so runs are
    reproducible.

    Args:
        apply: ``x -> A x`` on arrays of ``shape``.
        adjoint: ``y -> A^T y``.
        shape: Shape of the operator's input.
        tol: Relative tolerance on the eigenvalue of ``A^T A``.
        max_iter: Iteration cap.
        seed: Seed of the starting vector.

    Returns:
        The estimate; ``converged`` is False if ``max_iter`` was hit.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    eigenvalue = math.inf
    for iteration in range(1, max_iter + 1):
        z = adjoint(apply(x))
        norm = float(np.linalg.norm(z))
        if norm == 0.0:
            return SpectralNormResult(0.0, iteration, True)
        converged = abs(norm - eigenvalue) <= tol * norm
        eigenvalue = norm
        x = z / norm
        if converged:
            return SpectralNormResult(math.sqrt(eigenvalue), iteration, True)
    logger.warning("Power method stopped after %d iterations", max_iter)
    return SpectralNormResult(math.sqrt(eigenvalue), max_iter, False)


def matrix_spectral_norm(matrix, **kwargs) -> SpectralNormResult:
    """`spectral_norm` of a dense or sparse matrix."""
    return spectral_norm(
        lambda x: matrix @ x, lambda y: matrix.T @ y, (matrix.shape[1],), **kwargs
    )


def _difference(theta: "ThetaMatrix | np.ndarray", sparse: SparseTheta) -> np.ndarray:
    dense = theta.values if isinstance(theta, ThetaMatrix) else np.asarray(theta)
    if dense.shape != (sparse.size, sparse.size):
        raise BadShapeError(
            f"Theta of shape {dense.shape!r} does not match operator of side {sparse.size}"
        )
    delta = np.array(dense, dtype=np.float64)
    rows, cols, values = sparse.triplets()
    delta[rows, cols] -= values
    return delta


def x_to_2_error(
    theta: "ThetaMatrix | np.ndarray", sparse: SparseTheta, sigma
) -> float:
    """
    Weighted column error ``max_i ||(Theta - S)^(i)||_2 / sigma_i``.

    This is the operator norm of ``H - H_S`` from the weighted ``l1`` ball
    of wavelet coefficients to ``l2``.

    Raises:
        BadShapeError: If shapes differ.
    """
    weights = np.asarray(getattr(sigma, "values", sigma), dtype=np.float64)
    delta = _difference(theta, sparse)
    if weights.shape != (delta.shape[1],):
        raise BadShapeError(f"Expected {delta.shape[1]} weights, got {weights.shape!r}")
    return float(np.max(np.linalg.norm(delta, axis=0) / weights))


def theta_spectral_error(
    theta: "ThetaMatrix | np.ndarray", sparse: SparseTheta, **kwargs
) -> SpectralNormResult:
    """Spectral norm of ``Theta - S``, which equals ``||H - H_S||_2`` by orthogonality."""
    return matrix_spectral_norm(_difference(theta, sparse), **kwargs)


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """
    Peak signal-to-noise ratio ``10 log10(peak^2 N / ||a - b||^2)`` in dB.

    Returns:
        ``math.inf`` when the images are identical.

    Raises:
        BadShapeError: If shapes differ.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise BadShapeError(f"Shape mismatch: {a.shape!r} != {b.shape!r}")
    if peak <= 0:
        raise ValueError(f"Invalid peak: {peak!r}")
    if np.array_equal(a, b):
        return math.inf
    return float(peak_signal_noise_ratio(a, b, data_range=peak))


def transform_opcount(basis: WaveletBasis) -> float:
    """
    Multiply-adds of one wavelet transform.

    Each level filters its ``s**d`` input once per axis with both ``2M``-tap
    filters, producing half the samples each.
    """
    taps = 2 * basis.vanishing_moments
    total = 0.0
    side = basis.size
    for _ in range(basis.levels):
        total += basis.ndim * side**basis.ndim * taps
        side //= 2
    return total


def opcount_sparse(
    sparse: SparseTheta,
    basis: WaveletBasis | None = None,
    *,
    include_transform: bool = False,
) -> float:
    """
    Cost of one application of ``Psi S Psi^*``.

    Args:
        sparse: The sparse operator.
        basis: Needed with ``include_transform``.
        include_transform: Add a forward and an inverse transform.

    Returns:
        ``nnz``, plus twice `transform_opcount` when requested.
    """
    count = float(sparse.nnz)
    if include_transform:
        basis = basis or sparse.basis
        if basis is None:
            raise ValueError("A basis is needed to count transform operations")
        count += 2 * transform_opcount(basis)
    return count
