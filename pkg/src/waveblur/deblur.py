"""
Total-variation deblurring with an approximate forward operator.

An image is degraded as ``v = H u + noise`` and restored by solving

    minimize TV(u)  subject to  ||A u - v||^2 <= alpha

with ``alpha = (1 + epsilon) sigma^2 N`` and ``A`` any approximation of
``H``. The solver is a first-order primal-dual scheme with one dual
variable for the gradient and one for the data constraint.
"""

import logging
import math
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .metrics import psnr, spectral_norm
from .operators import LinearApproximation
from .report import ReportRow

logger = logging.getLogger(__name__)

ImageMap = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DegradationSpec:
    """
    Noise model of the degradation.

    Args:
        noise_std: Standard deviation ``sigma`` of the additive Gaussian noise.
        seed: Seed of the noise stream.
    """

    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.noise_std >= 0:
            raise ValueError(f"Invalid noise level: {self.noise_std!r}")


@dataclass(frozen=True)
class SolverParams:
    """
    Parameters of the primal-dual solver.

    Args:
        epsilon: Slack of the constraint radius.
        max_iter: Iteration cap.
        tol: Stop when the relative change of the iterate drops below this.
        tau: Primal step; ``0.95 / L`` when omitted.
        dual_step: Dual step; ``0.95 / L`` when omitted.
        norm_iterations: Power iterations used to estimate ``L``.
        noiseless_alpha: Constraint level per pixel used when ``sigma = 0``.
    """

    epsilon: float = 0.05
    max_iter: int = 2000
    tol: float = 1e-6
    tau: float | None = None
    dual_step: float | None = None
    norm_iterations: int = 50
    noiseless_alpha: float = 1e-7

    def __post_init__(self):
        if self.epsilon < 0 or self.max_iter < 1 or self.tol <= 0:
            raise ValueError(f"Invalid solver parameters: {self!r}")
        for step in (self.tau, self.dual_step):
            if step is not None and step <= 0:
                raise ValueError(f"Step sizes must be positive: {self!r}")


@dataclass(frozen=True, eq=False)
class DeblurResult:
    """
    Output of `tv_deblur`.

    Args:
        image: Final iterate.
        iterations: Iterations performed.
        converged: False if ``max_iter`` was reached first.
        alpha: Constraint level.
        residual: ``||A u - v||^2`` at the final iterate.
    """

    image: np.ndarray
    iterations: int
    converged: bool
    alpha: float
    residual: float

    @property
    def feasible(self) -> bool:
        return self.residual <= 1.01 * self.alpha


def gaussian_noise(shape: tuple[int, ...], std: float, seed: int) -> np.ndarray:
    """
    Gaussian noise from a counter-based stream (Philox) through Box-Muller.

    The same ``(shape, std, seed)`` always gives the same bits.
    """
    count = math.prod(shape)
    rng = np.random.Generator(np.random.Philox(seed))
    pairs = (count + 1) // 2
    u1 = rng.random(pairs)
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log1p(-u1))
    angle = 2.0 * np.pi * u2
    normal = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:count]
    return std * normal.reshape(shape)


def degrade(op_apply: ImageMap, u: np.ndarray, noise_std: float, seed: int) -> np.ndarray:
    """
    ``v = A u + noise``.

    With ``noise_std = 0`` this is exactly ``op_apply(u)``.
    """
    blurred = op_apply(np.asarray(u, dtype=np.float64))
    if noise_std == 0:
        return blurred
    return blurred + gaussian_noise(blurred.shape, noise_std, seed)


def gradient(u: np.ndarray) -> np.ndarray:
    """Forward differences with periodic boundaries, shape ``(2, n, n)``."""
    return np.stack([np.roll(u, -1, axis=0) - u, np.roll(u, -1, axis=1) - u])


def divergence(p: np.ndarray) -> np.ndarray:
    """Negative adjoint of `gradient`."""
    return (p[0] - np.roll(p[0], 1, axis=0)) + (p[1] - np.roll(p[1], 1, axis=1))


def tv(u: np.ndarray) -> float:
    """Isotropic total variation."""
    g = gradient(np.asarray(u, dtype=np.float64))
    return float(np.sum(np.sqrt(g[0] ** 2 + g[1] ** 2)))


def constraint_level(noise_std: float, count: int, params: SolverParams) -> float:
    """``alpha = (1 + epsilon) sigma^2 N``, or the noiseless level when ``sigma = 0``."""
    if noise_std > 0:
        return (1.0 + params.epsilon) * noise_std**2 * count
    return params.noiseless_alpha * count


def _stacked_norm(op_apply: ImageMap, op_adjoint: ImageMap, shape, iterations: int) -> float:
    result = spectral_norm(
        lambda x: (gradient(x), op_apply(x)),
        lambda pq: -divergence(pq[0]) + op_adjoint(pq[1]),
        shape,
        tol=1e-4,
        max_iter=iterations,
    )
    return result.value


def tv_deblur(
    op_apply: ImageMap,
    op_adjoint: ImageMap,
    v: np.ndarray,
    noise_std: float,
    params: SolverParams | None = None,
) -> DeblurResult:
    """
    Restore ``v`` by TV minimization under the data constraint.

    Args:
        op_apply: Forward operator ``A``.
        op_adjoint: Its adjoint.
        v: Degraded image.
        noise_std: Noise level ``sigma`` used for the constraint.
        params: Solver parameters.

    Returns:
        The restoration. ``converged`` is False when ``max_iter`` was reached.

    Raises:
        ValueError: If the given steps violate ``tau * s * L^2 <= 1``.
    """
    params = params or SolverParams()
    v = np.asarray(v, dtype=np.float64)
    alpha = constraint_level(noise_std, v.size, params)
    radius = math.sqrt(alpha)

    norm = _stacked_norm(op_apply, op_adjoint, v.shape, params.norm_iterations)
    tau = params.tau if params.tau is not None else 0.95 / norm
    step = params.dual_step if params.dual_step is not None else 0.95 / norm
    if tau * step * norm**2 > 1.0 + 1e-12:
        raise ValueError(f"Steps violate tau * s * L^2 <= 1 with L = {norm:.4g}")

    u = v.copy()
    u_bar = u.copy()
    p = np.zeros((2,) + v.shape)
    q = np.zeros_like(v)
    converged = False
    iteration = 0
    for iteration in range(1, params.max_iter + 1):
        p += step * gradient(u_bar)
        p /= np.maximum(1.0, np.sqrt(p[0] ** 2 + p[1] ** 2))

        w = q + step * op_apply(u_bar)
        # prox of the conjugate of the ball indicator, by the Moreau identity
        center = w / step - v
        distance = float(np.linalg.norm(center))
        projected = v + center * min(1.0, radius / distance) if distance > 0 else w / step
        q = w - step * projected

        u_next = u + tau * (divergence(p) - op_adjoint(q))
        u_bar = 2.0 * u_next - u
        change = float(np.linalg.norm(u_next - u)) / max(float(np.linalg.norm(u)), 1e-12)
        u = u_next
        if change < params.tol:
            converged = True
            break
    residual = float(np.sum((op_apply(u) - v) ** 2))
    if not converged:
        logger.warning("TV solver stopped after %d iterations", iteration)
    if residual > 1.01 * alpha:
        logger.warning("Constraint violated at termination: %.4g > %.4g", residual, alpha)
    return DeblurResult(u, iteration, converged, alpha, residual)


def deblur_experiment(
    image: np.ndarray,
    exact: LinearApproximation,
    approximations: Sequence[LinearApproximation],
    degradation: DegradationSpec,
    params: SolverParams | None = None,
    *,
    experiment: str = "deblur",
) -> tuple[list[ReportRow], list[np.ndarray]]:
    """
    Degrade ``image`` with the exact operator and restore it with each approximation.

    Returns:
        Report rows (pSNR of the degraded image and of every restoration,
        with solver wall time) and the matching images, one per row.
    """
    image = np.asarray(image, dtype=np.float64)
    degraded = degrade(exact.apply, image, degradation.noise_std, degradation.seed)
    rows = [
        ReportRow(experiment, "degraded", 0.0, 0.0, "psnr", psnr(image, degraded))
    ]
    images = [degraded]
    for approximation in approximations:
        start = time.perf_counter()
        result = tv_deblur(
            approximation.apply,
            approximation.adjoint,
            degraded,
            degradation.noise_std,
            params,
        )
        wall_ms = (time.perf_counter() - start) * 1000.0
        logger.info(
            "%s: %d iterations, pSNR %.2f dB",
            approximation.name,
            result.iterations,
            psnr(image, result.image),
        )
        rows.append(
            ReportRow(
                experiment,
                approximation.name,
                approximation.budget_ops,
                approximation.budget_over_n,
                "psnr",
                psnr(image, result.image),
                wall_ms,
            )
        )
        images.append(result.image)
    return rows, images
