"""
Windowed-convolution baseline.

The image is split into ``2^l x 2^l`` windows. Each window, weighted by its
mask, is convolved with the PSF sampled at the window center, and the
results are summed. With 50% overlap the masks are bilinear hats, which
interpolate linearly between neighboring PSFs.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.signal import fftconvolve

from .blur_kernel import KernelField
from .errors import BadLayoutError, BadShapeError

logger = logging.getLogger(__name__)

OVERLAPS = (0.0, 0.5)


@dataclass(frozen=True, eq=False)
class Window:
    """
    One window: the pixel box where its mask is nonzero, the mask and the PSF anchor.

    Args:
        rows: Row range ``[start, stop)``.
        cols: Column range ``[start, stop)``.
        mask: Weights on the box.
        center: Continuous point where the PSF is sampled.
    """

    rows: tuple[int, int]
    cols: tuple[int, int]
    mask: np.ndarray
    center: np.ndarray


@dataclass(frozen=True, eq=False)
class WindowLayout:
    """
    Partition of unity over an ``n x n`` image.

    Args:
        size: Image side ``n``.
        level: ``l``; there are ``4**l`` windows.
        overlap: 0 (flat masks) or 0.5 (bilinear hats).
        windows: The windows, row-major.
    """

    size: int
    level: int
    overlap: float
    windows: tuple[Window, ...]

    def weight_sum(self) -> np.ndarray:
        """Sum of all masks, which is 1 everywhere."""
        total = np.zeros((self.size, self.size))
        for window in self.windows:
            total[slice(*window.rows), slice(*window.cols)] += window.mask
        return total


def _axis_weights(size: int, count: int, overlap: float) -> list[tuple[int, int, np.ndarray, float]]:
    """Per-axis ``(start, stop, weights, center_pixel)`` for ``count`` windows."""
    width = size // count
    pixel = np.arange(size) + 0.5
    out = []
    for i in range(count):
        center = (i + 0.5) * width
        if overlap == 0:
            weights = ((pixel >= i * width) & (pixel < (i + 1) * width)).astype(np.float64)
        else:
            weights = np.clip(1.0 - np.abs(pixel - center) / width, 0.0, 1.0)
            if i == 0:
                weights[pixel <= center] = 1.0
            if i == count - 1:
                weights[pixel >= center] = 1.0
        nonzero = np.flatnonzero(weights)
        start, stop = int(nonzero[0]), int(nonzero[-1]) + 1
        out.append((start, stop, weights[start:stop], center - 0.5))
    return out


def make_layout(size: int, level: int, overlap: float = 0.0) -> WindowLayout:
    """
    Build the window layout.

    Args:
        size: Image side ``n``.
        level: ``l`` with ``2**l <= n``.
        overlap: 0 or 0.5.

    Raises:
        BadLayoutError: On an invalid level or overlap.
    """
    if level < 0 or 2**level > size or size % 2**level:
        raise BadLayoutError(f"Invalid level {level!r} for image side {size!r}")
    if overlap not in OVERLAPS:
        raise BadLayoutError(f"Unsupported overlap: {overlap!r}")
    axis = _axis_weights(size, 2**level, overlap)
    windows = []
    for r0, r1, row_weights, row_center in axis:
        for c0, c1, col_weights, col_center in axis:
            windows.append(
                Window(
                    rows=(r0, r1),
                    cols=(c0, c1),
                    mask=np.outer(row_weights, col_weights),
                    center=np.array([row_center, col_center]) / size,
                )
            )
    return WindowLayout(size, level, float(overlap), tuple(windows))


class WindowedConvolution:
    """
    The windowed-convolution operator of a layout and a field.

    PSFs are sampled once per window.
    """

    def __init__(self, layout: WindowLayout, field: KernelField):
        if field.ndim != 2 or field.grid_size != layout.size:
            raise BadShapeError(
                f"Field grid {field.grid_size} does not match layout side {layout.size}"
            )
        self.layout = layout
        self.field = field
        self.radius = field.radius_pixels

    @cached_property
    def psfs(self) -> list[np.ndarray]:
        return [self.field.psf(window.center) for window in self.layout.windows]

    def _check(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.layout.size, self.layout.size):
            raise BadShapeError(f"Image shape {u.shape!r} does not match layout")
        return u

    def apply(self, u: np.ndarray) -> np.ndarray:
        u = self._check(u)
        n, r = self.layout.size, self.radius
        out = np.zeros((n + 2 * r, n + 2 * r))
        for window, psf in zip(self.layout.windows, self.psfs):
            (r0, r1), (c0, c1) = window.rows, window.cols
            patch = u[r0:r1, c0:c1] * window.mask
            # full convolution spans [start - r, stop + r) in image coordinates
            out[r0 : r1 + 2 * r, c0 : c1 + 2 * r] += fftconvolve(patch, psf, mode="full")
        return out[r : r + n, r : r + n]

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        v = self._check(v)
        n, r = self.layout.size, self.radius
        padded = np.pad(v, r)
        out = np.zeros((n, n))
        for window, psf in zip(self.layout.windows, self.psfs):
            (r0, r1), (c0, c1) = window.rows, window.cols
            region = padded[r0 : r1 + 2 * r, c0 : c1 + 2 * r]
            correlated = fftconvolve(region, psf[::-1, ::-1], mode="valid")
            out[r0:r1, c0:c1] += correlated * window.mask
        return out


def wc_apply(layout: WindowLayout, field: KernelField, u: np.ndarray) -> np.ndarray:
    """
    Apply the windowed-convolution approximation of ``H``.

    Raises:
        BadShapeError: If the image, layout and field sizes disagree.
    """
    return WindowedConvolution(layout, field).apply(u)


def wc_apply_adjoint(layout: WindowLayout, field: KernelField, v: np.ndarray) -> np.ndarray:
    """Adjoint of `wc_apply`."""
    return WindowedConvolution(layout, field).adjoint(v)


def wc_opcount(size: int, level: int, kappa_pixels: float) -> float:
    """
    Cost model ``4^l (n / 2^l + kappa)^2 log2(n / 2^l + kappa)``.

    ``size`` is the image side and ``kappa_pixels`` the PSF width in pixels.
    """
    side = size / 2**level + kappa_pixels
    return 4**level * side**2 * math.log2(side)
