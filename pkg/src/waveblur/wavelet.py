"""
Orthogonal Daubechies wavelet transforms on periodic grids.

Coefficients are stored in one flat vector per image, laid out subband by
subband from coarse to fine:

1. the coarse approximation block (scale ``j0 = log2(n) - levels``),
2. for every scale ``j = j0 .. log2(n) - 1`` the detail subbands in the
   orientation order ``(0, 1), (1, 0), (1, 1)`` (a single ``(1,)`` in 1D),

each subband flattened row-major. A subband with side ``2**j`` has scale
``j``, so a full decomposition starts at ``j = 0``.

The filter banks come from PyWavelets (``dbM``) and the transforms use its
``periodization`` mode, which keeps the transform exactly orthogonal.
"""

import bisect
import itertools
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import pywt

from .errors import BadIndexError, BadShapeError, UnsupportedOrderError

MAX_VANISHING_MOMENTS = 10
DEFAULT_LEVELS = 4
BOUNDARY_MODE = "periodization"


def orientations(ndim: int) -> tuple[tuple[int, ...], ...]:
    """
    Detail orientations in layout order.

    Args:
        ndim: Grid dimension (1 or 2).

    Returns:
        Every non-zero vector of ``{0, 1}^ndim``; entry ``i`` is 1 when the
        subband is high-pass along array axis ``i``.
    """
    return tuple(e for e in itertools.product((0, 1), repeat=ndim) if any(e))


def _pywt_key(orientation: Sequence[int]) -> str:
    return "".join("ad"[bit] for bit in orientation)


def _log2(n: int) -> int:
    return n.bit_length() - 1


def _check_grid(size: int, levels: int, ndim: int) -> None:
    if ndim not in (1, 2):
        raise BadShapeError(f"Unsupported grid dimension: {ndim!r}")
    if size < 2 or size & (size - 1):
        raise BadShapeError(f"Grid size must be a power of two: {size!r}")
    if not 1 <= levels <= _log2(size):
        raise BadShapeError(
            f"Invalid number of levels {levels!r} for grid size {size}"
        )


@dataclass(frozen=True, eq=False)
class FilterPair:
    """
    Synthesis filters of an orthonormal Daubechies wavelet.

    Args:
        lowpass: Scaling filter taps (``2M`` taps, summing to sqrt(2)).
        highpass: Quadrature mirror wavelet taps.
        vanishing_moments: Number of vanishing moments ``M``.
        support_length: Support constant ``c(M) = 2M - 1``.
    """

    lowpass: np.ndarray
    highpass: np.ndarray
    vanishing_moments: int
    support_length: int

    @property
    def name(self) -> str:
        """PyWavelets name of the filter family member, e.g. ``db4``."""
        return f"db{self.vanishing_moments}"

    @cached_property
    def wavelet(self) -> pywt.Wavelet:
        return pywt.Wavelet(self.name)


@lru_cache(maxsize=None)
def make_daubechies_filter(vanishing_moments: int) -> FilterPair:
    """
    Build the minimal-phase Daubechies filter pair with ``M`` vanishing moments.

    Args:
        vanishing_moments: ``M``, between 1 (Haar) and 10.

    Returns:
        The filter pair. Instances are cached and their taps are read-only.

    Raises:
        UnsupportedOrderError: If ``M`` is outside ``1..10``.
    """
    if not 1 <= vanishing_moments <= MAX_VANISHING_MOMENTS:
        raise UnsupportedOrderError(
            f"Invalid number of vanishing moments: {vanishing_moments!r}"
        )
    wavelet = pywt.Wavelet(f"db{vanishing_moments}")
    lowpass = np.asarray(wavelet.rec_lo, dtype=np.float64)
    highpass = np.asarray(wavelet.rec_hi, dtype=np.float64)
    lowpass.flags.writeable = False
    highpass.flags.writeable = False
    return FilterPair(
        lowpass=lowpass,
        highpass=highpass,
        vanishing_moments=vanishing_moments,
        support_length=2 * vanishing_moments - 1,
    )


def moment_sums(taps: np.ndarray, orders: int) -> np.ndarray:
    """
    Discrete moments of a filter about its center, on a normalized abscissa.

    The abscissa ``(t - c) / c`` (``c`` the tap center) stays in ``[-1, 1]``,
    so the sums are comparable across filter lengths. A filter has ``M``
    vanishing moments iff the first ``M`` sums vanish.

    Args:
        taps: Filter taps.
        orders: Number of moments to compute (``m = 0 .. orders - 1``).

    Returns:
        Array of the ``orders`` moment sums.
    """
    taps = np.asarray(taps, dtype=np.float64)
    center = (taps.size - 1) / 2
    abscissa = (np.arange(taps.size) - center) / center
    return np.array([np.sum(abscissa**m * taps) for m in range(orders)])


@dataclass(frozen=True)
class WaveletIndex:
    """
    Multiscale index ``(j, m, e)`` of a basis function.

    Args:
        scale: Scale ``j``; the subband has side ``2**j``.
        position: Translation ``m`` in ``{0, .., 2**j - 1}^d``.
        orientation: ``e`` in ``{0, 1}^d``; all zeros only for the coarse block.
    """

    scale: int
    position: tuple[int, ...]
    orientation: tuple[int, ...]


@dataclass(frozen=True)
class Subband:
    """A contiguous block of the flat coefficient layout."""

    scale: int
    orientation: tuple[int, ...]
    offset: int
    side: int
    ndim: int

    @property
    def size(self) -> int:
        return self.side**self.ndim

    @property
    def is_coarse(self) -> bool:
        return not any(self.orientation)


class IndexMap(Sequence[WaveletIndex]):
    """
    Bijection between flat coefficient positions and multiscale indices.

    Use `index_map()` to get a cached instance.

    Args:
        size: Grid side ``n`` (power of two).
        levels: Number of decomposition levels ``J``.
        ndim: Grid dimension.
    """

    def __init__(self, size: int, levels: int, ndim: int = 2):
        _check_grid(size, levels, ndim)
        self.size = size
        self.levels = levels
        self.ndim = ndim
        self.coarsest_scale = _log2(size) - levels
        self.finest_scale = _log2(size) - 1

        subbands = []
        offset = 0
        side = 2**self.coarsest_scale
        coarse = Subband(self.coarsest_scale, (0,) * ndim, 0, side, ndim)
        subbands.append(coarse)
        offset += coarse.size
        for scale in range(self.coarsest_scale, self.finest_scale + 1):
            for orientation in orientations(ndim):
                band = Subband(scale, orientation, offset, 2**scale, ndim)
                subbands.append(band)
                offset += band.size
        self.subbands: tuple[Subband, ...] = tuple(subbands)
        self._offsets = [band.offset for band in subbands]
        self._by_key = {(band.scale, band.orientation): band for band in subbands}

    @property
    def count(self) -> int:
        """Number of coefficients ``N = n**d``."""
        return self.size**self.ndim

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, i):  # type: ignore[override]
        return self.from_flat(i)

    def __iter__(self) -> Iterator[WaveletIndex]:
        for i in range(self.count):
            yield self.from_flat(i)

    def scales_present(self) -> range:
        return range(self.coarsest_scale, self.finest_scale + 1)

    def subbands_at(self, scale: int) -> list[Subband]:
        """All subbands (coarse block included) whose scale is ``scale``."""
        return [band for band in self.subbands if band.scale == scale]

    def subband_of(self, i: int) -> Subband:
        if not 0 <= i < self.count:
            raise BadIndexError(f"Flat index out of range: {i!r}")
        return self.subbands[bisect.bisect_right(self._offsets, i) - 1]

    def to_flat(self, index: WaveletIndex) -> int:
        """
        Flat position of a multiscale index.

        Raises:
            BadIndexError: If the index does not exist on this grid.
        """
        band = self._by_key.get((index.scale, tuple(index.orientation)))
        if band is None or len(index.position) != self.ndim:
            raise BadIndexError(f"Invalid wavelet index: {index!r}")
        if any(not 0 <= p < band.side for p in index.position):
            raise BadIndexError(f"Invalid wavelet position: {index!r}")
        local = np.ravel_multi_index(index.position, (band.side,) * self.ndim)
        return band.offset + int(local)

    def from_flat(self, i: int) -> WaveletIndex:
        if i < 0:
            i += self.count
        band = self.subband_of(i)
        position = np.unravel_index(i - band.offset, (band.side,) * self.ndim)
        return WaveletIndex(
            band.scale, tuple(int(p) for p in position), band.orientation
        )

    def scale_of(self, i: int) -> int:
        return self.subband_of(i).scale

    @cached_property
    def scales(self) -> np.ndarray:
        """Scale of every flat position."""
        return np.concatenate(
            [np.full(band.size, band.scale, dtype=np.int64) for band in self.subbands]
        )

    @cached_property
    def positions(self) -> np.ndarray:
        """``(N, d)`` array of translations ``m``."""
        parts = []
        for band in self.subbands:
            grid = np.indices((band.side,) * self.ndim).reshape(self.ndim, -1)
            parts.append(grid.T)
        return np.concatenate(parts).astype(np.int64)

    @cached_property
    def orientation_codes(self) -> np.ndarray:
        """``(N, d)`` array of orientations ``e``."""
        return np.concatenate(
            [
                np.tile(np.asarray(band.orientation, dtype=np.int64), (band.size, 1))
                for band in self.subbands
            ]
        )


@lru_cache(maxsize=64)
def index_map(size: int, levels: int, ndim: int = 2) -> IndexMap:
    """
    Cached `IndexMap` for a grid.

    Raises:
        BadShapeError: If ``size`` is not a power of two or ``levels`` too large.
    """
    return IndexMap(size, levels, ndim)


def _forward(
    array: np.ndarray, levels: int, wavelet: pywt.Wavelet, ndim: int
) -> np.ndarray:
    axes = tuple(range(-ndim, 0))
    approx_key = "a" * ndim
    approx = array
    details = []
    for _ in range(levels):
        bands = pywt.dwtn(approx, wavelet, mode=BOUNDARY_MODE, axes=axes)
        approx = bands.pop(approx_key)
        details.append(bands)
    batch = array.shape[: array.ndim - ndim]
    parts = [approx.reshape(*batch, -1)]
    for bands in reversed(details):
        for orientation in orientations(ndim):
            parts.append(bands[_pywt_key(orientation)].reshape(*batch, -1))
    return np.concatenate(parts, axis=-1)


def _inverse(
    flat: np.ndarray, size: int, levels: int, wavelet: pywt.Wavelet, ndim: int
) -> np.ndarray:
    axes = tuple(range(-ndim, 0))
    batch = flat.shape[:-1]
    side = size >> levels
    offset = side**ndim
    approx = flat[..., :offset].reshape(*batch, *(side,) * ndim)
    for _ in range(levels):
        bands = {"a" * ndim: approx}
        for orientation in orientations(ndim):
            bands[_pywt_key(orientation)] = flat[
                ..., offset : offset + side**ndim
            ].reshape(*batch, *(side,) * ndim)
            offset += side**ndim
        approx = pywt.idwtn(bands, wavelet, mode=BOUNDARY_MODE, axes=axes)
        side *= 2
    return approx


@dataclass(frozen=True, eq=False)
class WaveletCoeffs:
    """
    Flat wavelet coefficients with the grid they belong to.

    Args:
        values: Coefficients in the subband-major layout.
        size: Grid side ``n``.
        levels: Decomposition levels ``J``.
        ndim: Grid dimension.
    """

    values: np.ndarray
    size: int
    levels: int
    ndim: int = 2


def dwt(image: np.ndarray, levels: int, filter: FilterPair) -> WaveletCoeffs:
    """
    Forward periodized wavelet transform.

    Args:
        image: Square ``n**d`` array, ``n`` a power of two, ``d`` in {1, 2}.
        levels: Number of decomposition levels.
        filter: Filter pair from `make_daubechies_filter`.

    Returns:
        The coefficients in the flat layout.

    Raises:
        BadShapeError: On a non-square grid, a size that is not a power of
            two, or too many levels.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim not in (1, 2) or len(set(image.shape)) != 1:
        raise BadShapeError(f"Expected a square 1D or 2D grid, got {image.shape!r}")
    size = image.shape[0]
    _check_grid(size, levels, image.ndim)
    values = _forward(image, levels, filter.wavelet, image.ndim)
    return WaveletCoeffs(values, size, levels, image.ndim)


def idwt(coeffs: WaveletCoeffs, filter: FilterPair) -> np.ndarray:
    """
    Inverse of `dwt`.

    Raises:
        BadShapeError: If the coefficient count does not match the grid.
    """
    _check_grid(coeffs.size, coeffs.levels, coeffs.ndim)
    values = np.asarray(coeffs.values, dtype=np.float64)
    if values.shape != (coeffs.size**coeffs.ndim,):
        raise BadShapeError(
            f"Expected {coeffs.size**coeffs.ndim} coefficients, got {values.shape!r}"
        )
    return _inverse(values, coeffs.size, coeffs.levels, filter.wavelet, coeffs.ndim)


@dataclass(frozen=True)
class WaveletBasis:
    """
    A wavelet basis on a periodic ``n**d`` grid.

    Wraps `dwt`/`idwt` for batches: `forward` maps ``(..., n, n)`` images
    to ``(..., N)`` coefficient vectors and `inverse` maps them back.

    Args:
        size: Grid side ``n``.
        levels: Decomposition levels ``J``.
        vanishing_moments: Daubechies order ``M``.
        ndim: Grid dimension.
    """

    size: int
    levels: int = DEFAULT_LEVELS
    vanishing_moments: int = 1
    ndim: int = 2

    def __post_init__(self):
        _check_grid(self.size, self.levels, self.ndim)
        make_daubechies_filter(self.vanishing_moments)

    @property
    def filter(self) -> FilterPair:
        return make_daubechies_filter(self.vanishing_moments)

    @property
    def index_map(self) -> IndexMap:
        return index_map(self.size, self.levels, self.ndim)

    @property
    def count(self) -> int:
        return self.size**self.ndim

    @property
    def image_shape(self) -> tuple[int, ...]:
        return (self.size,) * self.ndim

    def forward(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        if images.shape[images.ndim - self.ndim :] != self.image_shape:
            raise BadShapeError(
                f"Expected trailing shape {self.image_shape!r}, got {images.shape!r}"
            )
        return _forward(images, self.levels, self.filter.wavelet, self.ndim)

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape[-1:] != (self.count,):
            raise BadShapeError(
                f"Expected {self.count} coefficients per vector, got {coeffs.shape!r}"
            )
        return _inverse(coeffs, self.size, self.levels, self.filter.wavelet, self.ndim)

    def atoms(self, columns: np.ndarray) -> np.ndarray:
        """Basis functions for a batch of flat indices, shape ``(len, n, n)``."""
        columns = np.asarray(columns, dtype=np.int64)
        unit = np.zeros((columns.size, self.count))
        unit[np.arange(columns.size), columns] = 1.0
        return self.inverse(unit)


def synthesize_atom(
    index: WaveletIndex, size: int, levels: int, filter: FilterPair
) -> np.ndarray:
    """
    Sample the basis function ``psi_lambda`` on the grid.

    Args:
        index: The multiscale index; its dimension sets the grid dimension.
        size: Grid side ``n``.
        levels: Decomposition levels ``J``.
        filter: Filter pair.

    Returns:
        The inverse transform of the canonical unit vector at ``index``.

    Raises:
        BadIndexError: If ``index`` does not exist on the grid.
    """
    ndim = len(index.position)
    mapping = index_map(size, levels, ndim)
    flat = np.zeros(mapping.count)
    flat[mapping.to_flat(index)] = 1.0
    return idwt(WaveletCoeffs(flat, size, levels, ndim), filter)


def scale_profile(coeffs: WaveletCoeffs) -> dict[int, tuple[float, float]]:
    """
    Amplitude of detail coefficients per scale.

    Args:
        coeffs: Coefficients of one image.

    Returns:
        Mapping ``scale -> (max |c|, mean |c|)`` over detail subbands.
    """
    mapping = index_map(coeffs.size, coeffs.levels, coeffs.ndim)
    magnitude = np.abs(np.asarray(coeffs.values))
    profile = {}
    for scale in mapping.scales_present():
        detail = [
            magnitude[band.offset : band.offset + band.size]
            for band in mapping.subbands_at(scale)
            if not band.is_coarse
        ]
        values = np.concatenate(detail)
        profile[scale] = (float(values.max()), float(values.mean()))
    return profile
