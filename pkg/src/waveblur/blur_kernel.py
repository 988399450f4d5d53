"""
Spatially varying blur kernels and the exact blurring operator.

A kernel field ``K(x, y)`` lives on ``[0, 1]^d``: ``K(., y)`` is the point
spread function of a point source at ``y``. On an ``n**d`` grid with points
``x_i = i / n`` the operator is the rectangle rule

    (Hu)[x_i] = 1/n**d * sum_j K(x_i, y_j) u[y_j]

restricted to the truncation window ``||x - y||_inf <= kappa``. Pixels outside
the grid contribute zero.

Gaussian covariances and support widths are expressed in pixels of a
*reference grid* (``reference_size``, 256 by default) so the same field can
be sampled at any resolution.
"""

import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, ClassVar

import numpy as np
import scipy.sparse as sp

from .errors import BadShapeError, BadSpecError, SingularCovarianceError, TooLargeError
from .formats import decode_psf_grid, encode_psf_grid

logger = logging.getLogger(__name__)

DEFAULT_REFERENCE_SIZE = 256
DEFAULT_DENSE_BUDGET = 4096
MAX_GRID_POINTS = 2**24
_TRUNCATION_SLACK = 1e-12


def truncated_support(t: np.ndarray, radius: float) -> np.ndarray:
    """Indicator of ``[0, radius]``, the default decay bound of a truncated field."""
    return (np.asarray(t) <= radius + _TRUNCATION_SLACK).astype(np.float64)


@dataclass(frozen=True)
class Regularity:
    """
    Regularity metadata ``(M, f)`` of a kernel field.

    Not enforced pointwise; carried along for the decay bounds.
    """

    order: int
    bound: Callable[[np.ndarray], np.ndarray]


def scaled_window(support: int, grid_size: int, reference_size: int) -> int:
    """
    Odd window width at ``grid_size`` for a support given at ``reference_size``.

    Raises:
        BadSpecError: If ``support`` is not a positive odd integer.
    """
    if support < 1 or support % 2 == 0:
        raise BadSpecError(f"Support must be a positive odd width: {support!r}")
    width = max(3, round(support * grid_size / reference_size))
    return width if width % 2 else width + 1


class KernelField:
    """
    Base class of kernel fields.

    Subclasses implement `_raw`, the untruncated kernel evaluated on
    broadcast arrays of points of shape ``(..., d)``.

    Args:
        grid_size: Side ``n`` of the grid the field is sampled on.
        ndim: Domain dimension.
        window: Odd width, in pixels at ``grid_size``, of the truncation window.
        normalize: Rescale every PSF so it sums to 1 on the grid.
    """

    kind: ClassVar[str] = ""

    def __init__(
        self,
        grid_size: int,
        *,
        ndim: int = 2,
        window: int = 1,
        normalize: bool = False,
        regularity: Regularity | None = None,
    ):
        if grid_size < 1:
            raise BadSpecError(f"Invalid grid size: {grid_size!r}")
        if ndim not in (1, 2):
            raise BadSpecError(f"Invalid dimension: {ndim!r}")
        if grid_size**ndim > MAX_GRID_POINTS:
            raise TooLargeError(f"Grid of {grid_size**ndim} points is too large")
        self.grid_size = grid_size
        self.ndim = ndim
        self.window = window
        self.radius_pixels = (window - 1) // 2
        self.truncation_radius = self.radius_pixels / grid_size
        self.normalize = normalize
        self.regularity = regularity or Regularity(
            order=10,
            bound=lambda t: truncated_support(t, self.truncation_radius),
        )

    def __repr__(self) -> str:
        return (
            f"{type(self).__name__}(grid_size={self.grid_size}, "
            f"window={self.window}, normalize={self.normalize})"
        )

    @property
    def point_count(self) -> int:
        return self.grid_size**self.ndim

    def _raw(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def offsets(self) -> np.ndarray:
        """Integer pixel offsets ``x - y`` inside the window, shape ``(w**d, d)``."""
        r = self.radius_pixels
        axes = np.meshgrid(*[np.arange(-r, r + 1)] * self.ndim, indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=1)

    def _column_mass(self, y: np.ndarray) -> np.ndarray:
        shifted = y[..., None, :] + self.offsets() / self.grid_size
        raw = self._raw(shifted, np.broadcast_to(y[..., None, :], shifted.shape))
        return raw.sum(axis=-1) / self.point_count

    def evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """
        Evaluate ``K(x, y)`` on broadcast arrays of points.

        Args:
            x: Points of shape ``(..., d)``.
            y: Points of shape ``(..., d)``.

        Returns:
            Kernel values, zero wherever ``||x - y||_inf > kappa``.
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        x, y = np.broadcast_arrays(x, y)
        inside = np.max(np.abs(x - y), axis=-1) <= (
            self.truncation_radius + _TRUNCATION_SLACK
        )
        values = self._raw(x, y)
        if self.normalize:
            values = values / self._column_mass(y)
        return np.where(inside, values, 0.0)

    def psf(self, y: np.ndarray) -> np.ndarray:
        """
        Sampled PSF at ``y``: ``patch[o + r] = K(y + o/n, y) / n**d``.

        Args:
            y: A point of shape ``(d,)``.

        Returns:
            Patch of shape ``(w,) * d``.
        """
        y = np.asarray(y, dtype=np.float64)
        offsets = self.offsets()
        values = self.evaluate(y + offsets / self.grid_size, y)
        return (values / self.point_count).reshape((self.window,) * self.ndim)

    @cached_property
    def matrix(self) -> sp.csr_array:
        """The quadrature operator as a sparse matrix (see `blur_matrix`)."""
        return blur_matrix(self)


class IdentityField(KernelField):
    """``K(x, y) = n**d * delta(x - y)``; `apply_dense` is the identity."""

    kind = "identity"

    def __init__(self, grid_size: int, *, ndim: int = 2, normalize: bool = False):
        super().__init__(grid_size, ndim=ndim, window=1, normalize=normalize)

    def _raw(self, x, y):
        return np.full(np.shape(x)[:-1], float(self.point_count))


class GaussianField(KernelField):
    """
    Gaussian PSFs ``exp(-(x-y)^T C(y)^-1 (x-y) / 2) / ((2 pi)^(d/2) sqrt(det C(y)))``.

    Subclasses provide `reference_covariance`, in squared pixels of the
    reference grid. A floor ``(0.5 / n)^2 * Id`` is added to every
    covariance unless ``covariance_floor`` is False.
    """

    default_support: ClassVar[int] = 11

    def __init__(
        self,
        grid_size: int,
        *,
        ndim: int = 2,
        support: int | None = None,
        reference_size: int = DEFAULT_REFERENCE_SIZE,
        normalize: bool = False,
        covariance_floor: bool = True,
    ):
        if reference_size < 1:
            raise BadSpecError(f"Invalid reference size: {reference_size!r}")
        support = self.default_support if support is None else int(support)
        super().__init__(
            grid_size,
            ndim=ndim,
            window=scaled_window(support, grid_size, reference_size),
            normalize=normalize,
        )
        self.reference_size = reference_size
        self.covariance_floor = covariance_floor

    def reference_covariance(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def covariance(self, y: np.ndarray) -> np.ndarray:
        """Covariance in continuous units, shape ``(..., d, d)``."""
        c = self.reference_covariance(y) / self.reference_size**2
        if self.covariance_floor:
            c = c + (0.5 / self.grid_size) ** 2 * np.eye(self.ndim)
        return c

    def _raw(self, x, y):
        c = self.covariance(y)
        det = np.linalg.det(c)
        if np.any(det <= 0):
            raise SingularCovarianceError(
                f"{type(self).__name__}: covariance is singular at some y"
            )
        diff = x - y
        quad = np.einsum("...i,...ij,...j->...", diff, np.linalg.inv(c), diff)
        norm = (2 * np.pi) ** (self.ndim / 2) * np.sqrt(det)
        return np.exp(-0.5 * quad) / norm


class ConvolutionField(GaussianField):
    """
    Spatially invariant Gaussian blur.

    Args:
        variance: Scalar variance or full ``d x d`` covariance, in reference pixels squared.
    """

    kind = "convolution"

    def __init__(self, grid_size: int, *, variance: Any = 1.0, **kwargs):
        super().__init__(grid_size, **kwargs)
        cov = np.asarray(variance, dtype=np.float64)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(self.ndim)
        if cov.shape != (self.ndim, self.ndim):
            raise BadSpecError(f"Invalid covariance shape: {cov.shape!r}")
        self.variance = cov

    def reference_covariance(self, y):
        return np.broadcast_to(self.variance, np.shape(y)[:-1] + self.variance.shape)


class GaussianIsotropicField(GaussianField):
    """
    Gaussian blur growing along the first axis: ``C(y) = slope * y_1 * Id``.

    ``y_1`` is the coordinate along array axis 0.
    """

    kind = "gaussian_isotropic_field"

    def __init__(self, grid_size: int, *, slope: float = 2.0, **kwargs):
        super().__init__(grid_size, **kwargs)
        if slope < 0:
            raise BadSpecError(f"Invalid slope: {slope!r}")
        self.slope = float(slope)

    def reference_covariance(self, y):
        scale = self.slope * np.asarray(y)[..., 0]
        return scale[..., None, None] * np.eye(self.ndim)


class GaussianRotationField(GaussianField):
    """
    Anisotropic Gaussian blur rotating around the image center.

    ``C(y) = R^T diag(g, h) R`` with ``R`` the rotation by
    ``theta = arctan((y_1 - 1/2) / (y_2 - 1/2))``, ``g = major * r`` and
    ``h = minor * r``, ``r`` the distance from ``y`` to the center.
    """

    kind = "gaussian_rotation_field"
    default_support = 21

    def __init__(
        self, grid_size: int, *, major: float = 10.0, minor: float = 2.0, **kwargs
    ):
        super().__init__(grid_size, **kwargs)
        if self.ndim != 2:
            raise BadSpecError("The rotation field is only defined in 2D")
        if major < 0 or minor < 0:
            raise BadSpecError(f"Invalid axis scales: {major!r}, {minor!r}")
        self.major = float(major)
        self.minor = float(minor)

    def reference_covariance(self, y):
        y = np.asarray(y)
        dy1 = y[..., 0] - 0.5
        dy2 = y[..., 1] - 0.5
        theta = np.arctan2(dy1, dy2)
        radius = np.hypot(dy1, dy2)
        cos, sin = np.cos(theta), np.sin(theta)
        rotation = np.stack(
            [np.stack([cos, -sin], axis=-1), np.stack([sin, cos], axis=-1)], axis=-2
        )
        diag = np.zeros(y.shape[:-1] + (2, 2))
        diag[..., 0, 0] = self.major * radius
        diag[..., 1, 1] = self.minor * radius
        return np.swapaxes(rotation, -1, -2) @ diag @ rotation


class TabulatedPSFGrid(KernelField):
    """
    PSFs sampled on an ``s x s`` grid of anchors, bilinearly interpolated in ``y``.

    Anchor ``(a, b)`` sits at ``((a + 0.5) / s, (b + 0.5) / s)``. Each patch
    holds the sampled PSF ``K(y + o/n, y) / n**2`` for offsets ``o`` in the
    window, so patches are tied to the grid they were sampled on.

    Args:
        patches: Array of shape ``(s, s, p, p)`` with ``p`` odd.
    """

    kind = "tabulated_psf_grid"

    def __init__(
        self, grid_size: int, *, patches: np.ndarray, normalize: bool = False
    ):
        patches = np.asarray(patches, dtype=np.float64)
        if patches.ndim != 4 or patches.shape[0] != patches.shape[1]:
            raise BadSpecError(f"Invalid PSF grid shape: {patches.shape!r}")
        if patches.shape[2] != patches.shape[3] or patches.shape[2] % 2 == 0:
            raise BadSpecError(f"PSF patches must be square and odd: {patches.shape!r}")
        if np.any(patches < 0) or not np.all(np.isfinite(patches)):
            raise BadSpecError("PSF patches must be finite and nonnegative")
        super().__init__(grid_size, ndim=2, window=patches.shape[2], normalize=normalize)
        self.patches = patches
        self.anchors = patches.shape[0]

    def _raw(self, x, y):
        s = self.anchors
        r = self.radius_pixels
        offset = np.rint((x - y) * self.grid_size).astype(np.int64) + r
        inside = np.all((offset >= 0) & (offset < self.window), axis=-1)
        offset = np.clip(offset, 0, self.window - 1)
        t = np.clip(y * s - 0.5, 0.0, s - 1.0)
        lower = np.minimum(np.floor(t).astype(np.int64), max(s - 2, 0))
        upper = np.minimum(lower + 1, s - 1)
        frac = t - lower
        value = np.zeros(np.shape(x)[:-1])
        for i_index, wi in ((lower[..., 0], 1 - frac[..., 0]), (upper[..., 0], frac[..., 0])):
            for j_index, wj in ((lower[..., 1], 1 - frac[..., 1]), (upper[..., 1], frac[..., 1])):
                value += wi * wj * self.patches[i_index, j_index, offset[..., 0], offset[..., 1]]
        return np.where(inside, value * self.point_count, 0.0)


FIELD_KINDS: dict[str, type[KernelField]] = {
    cls.kind: cls
    for cls in (
        IdentityField,
        ConvolutionField,
        GaussianIsotropicField,
        GaussianRotationField,
        TabulatedPSFGrid,
    )
}


def make_field(spec: Mapping[str, Any]) -> KernelField:
    """
    Build a kernel field from a parameter record.

    The record needs ``kind`` and ``grid_size``; every other key is passed to
    the field's constructor. ``tabulated_psf_grid`` accepts ``path`` (a
    WBPSF1 file) in place of ``patches``.

    Raises:
        BadSpecError: On an unknown kind or invalid parameters.
    """
    params = dict(spec)
    kind = params.pop("kind", None)
    cls = FIELD_KINDS.get(kind)  # type: ignore[arg-type]
    if cls is None:
        raise BadSpecError(f"Unknown kernel kind: {kind!r}")
    if "grid_size" not in params:
        raise BadSpecError("Kernel spec is missing grid_size")
    grid_size = int(params.pop("grid_size"))
    if cls is TabulatedPSFGrid and "path" in params:
        params["patches"] = load_psf_grid(params.pop("path"))
    try:
        return cls(grid_size, **params)
    except TypeError as error:
        raise BadSpecError(f"Invalid parameters for {kind}: {error}") from error


def eval_kernel(field: KernelField, x, y) -> float:
    """Evaluate ``K(x, y)`` at a single pair of points."""
    return float(field.evaluate(np.asarray(x), np.asarray(y)))


def blur_matrix(field: KernelField) -> sp.csr_array:
    """
    Assemble the truncated quadrature operator as an ``N x N`` CSR matrix.

    Row ``i`` holds ``K(x_i, y_j) / n**d`` for every ``y_j`` in the window.
    Prefer the cached ``field.matrix``.
    """
    n, d = field.grid_size, field.ndim
    count = field.point_count
    pixels = np.indices((n,) * d).reshape(d, -1).T
    rows, cols, values = [], [], []
    for offset in field.offsets():
        source = pixels - offset
        valid = np.all((source >= 0) & (source < n), axis=1)
        target = np.flatnonzero(valid)
        source = source[valid]
        weights = field.evaluate(pixels[valid] / n, source / n) / count
        keep = weights != 0
        rows.append(target[keep])
        cols.append(np.ravel_multi_index(tuple(source[keep].T), (n,) * d))
        values.append(weights[keep])
    matrix = sp.csr_array(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))),
        shape=(count, count),
    )
    logger.debug("Assembled %r with %d nonzeros", field, matrix.nnz)
    return matrix


def _flat_image(field: KernelField, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (field.grid_size,) * field.ndim:
        raise BadShapeError(
            f"Image shape {u.shape!r} does not match grid {field.grid_size}"
        )
    return u.ravel()


def apply_dense(field: KernelField, u: np.ndarray) -> np.ndarray:
    """
    Blur ``u`` with the exact operator ``H``.

    Raises:
        BadShapeError: If ``u`` is not sampled on the field's grid.
    """
    return (field.matrix @ _flat_image(field, u)).reshape(np.shape(u))


def apply_adjoint_dense(field: KernelField, u: np.ndarray) -> np.ndarray:
    """Apply ``H^*``."""
    return (field.matrix.T @ _flat_image(field, u)).reshape(np.shape(u))


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """Dense matrix of ``H`` with its provenance."""

    matrix: np.ndarray
    field: KernelField
    grid_size: int


def assemble_dense(
    field: KernelField, budget: int = DEFAULT_DENSE_BUDGET
) -> DenseOperator:
    """
    Dense ``N x N`` matrix of ``H``.

    Args:
        field: The kernel field.
        budget: Largest ``N`` allowed.

    Raises:
        TooLargeError: If ``N`` exceeds ``budget``.
    """
    if field.point_count > budget:
        raise TooLargeError(
            f"Dense operator of side {field.point_count} exceeds budget {budget}"
        )
    return DenseOperator(field.matrix.toarray(), field, field.grid_size)


def sample_psf_grid(field: KernelField, anchors: int) -> np.ndarray:
    """
    Sample a field's PSFs on an ``anchors x anchors`` grid for `TabulatedPSFGrid`.

    Returns:
        Array of shape ``(anchors, anchors, w, w)``.
    """
    centers = (np.arange(anchors) + 0.5) / anchors
    return np.stack(
        [np.stack([field.psf(np.array([a, b])) for b in centers]) for a in centers]
    )


def load_psf_grid(path: str | Path) -> np.ndarray:
    """
    Load a WBPSF1 file.

    Raises:
        CorruptFileError: If the file is malformed.
    """
    return decode_psf_grid(Path(path).read_bytes())


def save_psf_grid(path: str | Path, patches: np.ndarray) -> None:
    """Write patches of shape ``(s, s, p, p)`` to a WBPSF1 file."""
    Path(path).write_bytes(encode_psf_grid(patches))
