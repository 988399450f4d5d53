"""
Sparsity patterns derived from decay bounds instead of from Theta.

For a kernel with ``M`` bounded derivatives the entries of Theta satisfy

    |theta[mu, lambda]| <= C 2^(-(M + d/2)|j - k| - (M + d) min(j, k)) f(dist)

where ``dist`` is the gap between the supports of ``psi_lambda`` (scale
``j``) and ``psi_mu`` (scale ``k``). Entries are grouped by *relation*
``(j, (k, s))``: the column scale, the row scale and the multiscale shift
``s`` between the two translations. `greedy_neighborhood` picks relations
by their bound alone, and `expand_pattern` turns them into a mask.
"""

import heapq
import logging
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadShapeError, BadSpecError, BudgetExceededError
from .metrics import theta_spectral_error
from .sparsification import SigmaWeights
from .theta_builder import SparseTheta, ThetaMatrix, threshold_abs
from .wavelet import IndexMap, WaveletBasis, WaveletIndex

logger = logging.getLogger(__name__)


def inverse_linear(t):
    """``f(t) = 1 / (1 + t)``."""
    return 1.0 / (1.0 + np.asarray(t, dtype=np.float64))


@dataclass(frozen=True)
class DecayBoundParams:
    """
    Parameters of the decay bound.

    Args:
        vanishing_moments: ``M``.
        constant: ``C_M``; it cancels when relations are ranked.
        bound: Non-increasing function ``f`` of the support gap.
        support_constant: ``c(M)``; defaults to ``2M - 1``.
        ndim: Domain dimension ``d``.
    """

    vanishing_moments: int = 1
    constant: float = 1.0
    bound: Callable = inverse_linear
    support_constant: float | None = None
    ndim: int = 2

    def __post_init__(self):
        if self.vanishing_moments < 1:
            raise BadSpecError(f"Invalid order: {self.vanishing_moments!r}")
        if not self.constant > 0:
            raise BadSpecError(f"Invalid constant: {self.constant!r}")
        grid = np.asarray(self.bound(np.linspace(0.0, 1.0, 101)), dtype=np.float64)
        if np.any(np.diff(grid) > 1e-12) or np.any(grid < 0):
            raise BadSpecError("The bound must be nonnegative and non-increasing")

    @property
    def c(self) -> float:
        if self.support_constant is None:
            return 2.0 * self.vanishing_moments - 1.0
        return float(self.support_constant)

    def scale_factor(self, j, k):
        """``2^(-(M + d/2)|j - k| - (M + d) min(j, k))``."""
        j = np.asarray(j, dtype=np.float64)
        k = np.asarray(k, dtype=np.float64)
        m, d = self.vanishing_moments, self.ndim
        return 2.0 ** (-(m + d / 2) * np.abs(j - k) - (m + d) * np.minimum(j, k))


def _torus_gap(a, b):
    gap = np.abs(np.asarray(a) - np.asarray(b)) % 1.0
    return np.minimum(gap, 1.0 - gap)


def _index_distance(j, m, k, n, c):
    centers = _torus_gap(2.0 ** -np.asarray(j)[..., None] * m, 2.0 ** -np.asarray(k)[..., None] * n)
    spread = (2.0 ** -np.asarray(j, dtype=np.float64) + 2.0 ** -np.asarray(k, dtype=np.float64)) * c / 2
    return np.maximum(0.0, centers.max(axis=-1) - spread)


def wavelet_distance(lam: WaveletIndex, mu: WaveletIndex, c: float) -> float:
    """
    Gap between the nominal supports of two wavelets, on the unit torus.

    ``max(0, ||2^-j m - 2^-k n||_inf - (2^-j + 2^-k) c / 2)``.
    """
    return float(
        _index_distance(
            lam.scale,
            np.asarray(lam.position, dtype=np.float64),
            mu.scale,
            np.asarray(mu.position, dtype=np.float64),
            c,
        )
    )


def multiscale_shift(lam: WaveletIndex, mu: WaveletIndex) -> tuple[int, ...]:
    """
    Shift ``floor(n / 2^max(k-j, 0)) - floor(m / 2^max(j-k, 0))``.

    ``lam = (j, m)`` is the column index and ``mu = (k, n)`` the row index.
    The result is not wrapped; see `wrap_shift`.
    """
    j, k = lam.scale, mu.scale
    return tuple(
        (n >> max(k - j, 0)) - (m >> max(j - k, 0))
        for m, n in zip(lam.position, mu.position)
    )


def wrap_shift(shift, j: int, k: int):
    """Reduce a shift to the symmetric range of the period ``2^min(j, k)``."""
    period = 2 ** min(j, k)
    half = period // 2
    wrapped = (np.asarray(shift) + half) % period - half
    return tuple(int(s) for s in wrapped) if np.ndim(wrapped) else int(wrapped)


def decay_bound(params: DecayBoundParams, j: int, k: int, shift) -> float:
    """
    Bound ``u(j, k, s)`` on the entries of relation ``(j, (k, s))``.

    ``f`` is evaluated at ``max(0, 2^-min(j,k) ||s||_inf - (2^-j + 2^-k) c / 2)``.
    """
    return float(_decay_bounds(params, j, k, np.abs(np.asarray(shift)).max(initial=0)))


def _decay_bounds(params: DecayBoundParams, j, k, shift_norm):
    j = np.asarray(j, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    gap = np.maximum(
        0.0,
        2.0 ** -np.minimum(j, k) * shift_norm - (2.0**-j + 2.0**-k) * params.c / 2,
    )
    return params.constant * params.scale_factor(j, k) * params.bound(gap)


@dataclass(frozen=True, order=True)
class Relation:
    """
    Relation ``(j, (k, s))``: columns at scale ``j``, rows at scale ``k``, shift ``s``.
    """

    column_scale: int
    row_scale: int
    shift: tuple[int, ...]


@dataclass(frozen=True)
class NeighborhoodSet:
    """
    Ordered set of relations.

    Args:
        relations: Relations in selection order.
        ndim: Domain dimension.
        predicted_nnz: Number of Theta entries the relations cover.
    """

    relations: tuple[Relation, ...] = ()
    ndim: int = 2
    predicted_nnz: int = 0

    def __post_init__(self):
        if len(set(self.relations)) != len(self.relations):
            raise BadSpecError("Duplicate relations in neighborhood")
        for relation in self.relations:
            j, k = relation.column_scale, relation.row_scale
            limit = 2 ** min(j, k) if min(j, k) >= 0 else 0
            if j < 0 or k < 0 or len(relation.shift) != self.ndim:
                raise BadSpecError(f"Invalid relation: {relation!r}")
            if any(not -limit <= s < limit for s in relation.shift):
                raise BadSpecError(f"Shift out of range: {relation!r}")

    def __len__(self) -> int:
        return len(self.relations)

    def __iter__(self) -> Iterator[Relation]:
        return iter(self.relations)

    def __contains__(self, relation: object) -> bool:
        return relation in set(self.relations)

    def to_text(self) -> str:
        """One ``j k s1 [s2]`` line per relation, in selection order."""
        return "".join(
            " ".join(str(v) for v in (r.column_scale, r.row_scale, *r.shift)) + "\n"
            for r in self.relations
        )

    @classmethod
    def from_text(cls, text: str, ndim: int = 2) -> "NeighborhoodSet":
        """
        Parse the format written by `to_text`. Blank lines and ``#`` comments are skipped.

        Raises:
            BadSpecError: On malformed lines.
        """
        relations = []
        for number, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                values = [int(v) for v in line.split()]
            except ValueError as error:
                raise BadSpecError(f"Line {number}: {error}") from error
            if len(values) != 2 + ndim:
                raise BadSpecError(f"Line {number}: expected {2 + ndim} integers")
            relations.append(Relation(values[0], values[1], tuple(values[2:])))
        return cls(tuple(relations), ndim)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path, ndim: int = 2) -> "NeighborhoodSet":
        return cls.from_text(Path(path).read_text(), ndim)


def relation_multiplicity(index_map: IndexMap, j: int, k: int) -> int:
    """Entries of one column at scale ``j`` covered by a relation ``(j, (k, s))``."""
    bands = len(index_map.subbands_at(k))
    return bands * 2 ** (index_map.ndim * max(k - j, 0))


def _shift_grid(j: int, k: int, ndim: int) -> np.ndarray:
    period = 2 ** min(j, k)
    half = period // 2
    axis = np.arange(-half, period - half)
    grids = np.meshgrid(*[axis] * ndim, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _column_weights(sigma, index_map: IndexMap) -> dict[int, float]:
    if isinstance(sigma, SigmaWeights):
        return {j: sigma.at_scale(index_map, j) for j in index_map.scales_present()}
    values = np.asarray(sigma, dtype=np.float64)
    return {j: float(values[index_map.scales == j][0]) for j in index_map.scales_present()}


def greedy_neighborhood(
    params: DecayBoundParams,
    sigma: "SigmaWeights | np.ndarray",
    k: int,
    index_map: IndexMap,
) -> NeighborhoodSet:
    """
    Select relations from the decay bound until they cover ``k`` entries.

    For every column scale ``j`` the residual ``gamma_j`` starts at the
    squared bound summed over one column. Each step takes the scale with
    the largest residual (ties: smaller ``j``), adds its unused relation
    with the largest ``u^2 * multiplicity`` (ties: smaller ``k``, smaller
    ``||s||_inf``, then lexicographic ``s``) and subtracts that amount
    divided by ``sigma_j^2``.

    Args:
        params: Decay bound parameters.
        sigma: Column weights, constant per scale.
        k: Target number of Theta entries.
        index_map: Coefficient layout (sets ``n``, ``J`` and ``d``).

    Raises:
        BudgetExceededError: If ``k`` exceeds ``N**2``.
    """
    ndim = index_map.ndim
    if params.ndim != ndim:
        raise BadShapeError(f"Bound is {params.ndim}D but the grid is {ndim}D")
    if k > index_map.count**2:
        raise BudgetExceededError(f"Budget {k} exceeds the {index_map.count**2} entries")
    scales = list(index_map.scales_present())
    weights = _column_weights(sigma, index_map)
    columns_at = {j: len(index_map.subbands_at(j)) * 2 ** (ndim * j) for j in scales}

    candidates: dict[int, list[tuple[float, int, int, tuple[int, ...]]]] = {}
    gamma: dict[int, float] = {}
    for j in scales:
        entries = []
        for row_scale in scales:
            shifts = _shift_grid(j, row_scale, ndim)
            norms = np.abs(shifts).max(axis=1)
            mult = relation_multiplicity(index_map, j, row_scale)
            scores = _decay_bounds(params, j, row_scale, norms) ** 2 * mult
            entries.extend(
                (-float(score), row_scale, int(norm), tuple(int(v) for v in shift))
                for score, norm, shift in zip(scores, norms, shifts)
            )
        entries.sort()
        candidates[j] = entries
        gamma[j] = -sum(entry[0] for entry in entries) / weights[j] ** 2

    heap = [(-gamma[j], j) for j in scales]
    heapq.heapify(heap)
    cursor = dict.fromkeys(scales, 0)
    chosen = []
    covered = 0
    while covered < k:
        if not heap:
            raise BudgetExceededError(f"No relations left after covering {covered} entries")
        _, j = heapq.heappop(heap)
        neg_score, row_scale, _, shift = candidates[j][cursor[j]]
        chosen.append(Relation(j, row_scale, shift))
        covered += columns_at[j] * relation_multiplicity(index_map, j, row_scale)
        gamma[j] += neg_score / weights[j] ** 2
        cursor[j] += 1
        if cursor[j] < len(candidates[j]):
            heapq.heappush(heap, (-gamma[j], j))
    logger.info("Selected %d relations covering %d entries", len(chosen), covered)
    return NeighborhoodSet(tuple(chosen), ndim, covered)


@dataclass(frozen=True, eq=False)
class SparsityMask:
    """
    Set of ``(row, col)`` positions of an ``N x N`` matrix, sorted by column then row.
    """

    rows: np.ndarray
    cols: np.ndarray
    size: int

    def __len__(self) -> int:
        return self.rows.size

    def __contains__(self, position: object) -> bool:
        row, col = position  # type: ignore[misc]
        return bool(np.any((self.rows == row) & (self.cols == col)))

    @classmethod
    def full(cls, size: int) -> "SparsityMask":
        cols, rows = np.divmod(np.arange(size * size), size)
        return cls(rows, cols, size)


def _band_flat(band, positions: np.ndarray) -> np.ndarray:
    """Flat indices of positions ``(..., d)`` inside ``band``."""
    local = np.ravel_multi_index(
        tuple(np.moveaxis(positions, -1, 0)), (band.side,) * band.ndim
    )
    return band.offset + local


def expand_pattern(nbh: NeighborhoodSet, index_map: IndexMap) -> SparsityMask:
    """
    All ``(mu, lambda)`` pairs whose wrapped shift belongs to a relation of ``nbh``.

    Every relation is expanded across all orientations of both scales.
    """
    ndim = index_map.ndim
    if nbh.ndim != ndim:
        raise BadShapeError(f"Neighborhood is {nbh.ndim}D but the grid is {ndim}D")
    rows, cols = [], []
    for relation in nbh:
        j, k = relation.column_scale, relation.row_scale
        shift = np.asarray(relation.shift, dtype=np.int64)
        column_bands = index_map.subbands_at(j)
        row_bands = index_map.subbands_at(k)
        if not column_bands or not row_bands:
            raise BadShapeError(f"Relation outside the grid scales: {relation!r}")
        m = np.indices((2**j,) * ndim).reshape(ndim, -1).T
        if k >= j:
            base = (m + shift) % 2**j
            spread = np.indices((2 ** (k - j),) * ndim).reshape(ndim, -1).T
            n = base[:, None, :] * 2 ** (k - j) + spread[None, :, :]
        else:
            n = ((m >> (j - k)) + shift) % 2**k
            n = n[:, None, :]
        for col_band in column_bands:
            col_flat = _band_flat(col_band, m)
            for row_band in row_bands:
                row_flat = _band_flat(row_band, n)
                rows.append(row_flat.ravel())
                cols.append(np.repeat(col_flat, n.shape[1]))
    if not rows:
        empty = np.empty(0, dtype=np.int64)
        return SparsityMask(empty, empty, index_map.count)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    order = np.lexsort((rows, cols))
    return SparsityMask(rows[order], cols[order], index_map.count)


def project_theta(
    theta: "ThetaMatrix | SparseTheta | np.ndarray", mask: SparsityMask
) -> SparseTheta:
    """
    Entries of Theta on ``mask``.

    Positions of ``mask`` missing from a `SparseTheta` are kept with value 0.
    """
    if isinstance(theta, SparseTheta):
        if theta.size != mask.size:
            raise BadShapeError(f"Mask of side {mask.size} does not fit side {theta.size}")
        picked = np.zeros(len(mask))
        rows, cols, values = theta.triplets()
        if values.size:
            stored = cols * theta.size + rows
            wanted = mask.cols.astype(np.int64) * mask.size + mask.rows
            pos = np.minimum(np.searchsorted(stored, wanted), stored.size - 1)
            found = stored[pos] == wanted
            picked[found] = values[pos[found]]
        return SparseTheta.from_triplets(mask.size, mask.rows, mask.cols, picked, theta.basis)
    if isinstance(theta, ThetaMatrix):
        dense, basis = theta.values, theta.basis
    else:
        dense, basis = np.asarray(theta, dtype=np.float64), None
    if dense.shape != (mask.size, mask.size):
        raise BadShapeError(f"Mask of side {mask.size} does not fit {dense.shape!r}")
    return SparseTheta.from_triplets(
        mask.size, mask.rows, mask.cols, dense[mask.rows, mask.cols], basis
    )


def _support_arcs(basis: WaveletBasis) -> tuple[dict, np.ndarray]:
    """
    Supports of the 1D factors of every atom, as circular arcs.

    Returns:
        A mapping ``(scale, e, m) -> factor id`` and a matrix of pixel gaps
        between the supports of every two factors.
    """
    n = basis.size
    log_n = n.bit_length() - 1
    ids = {}
    supports = []
    for scale in range(log_n - basis.levels, log_n):
        line = WaveletBasis(n, log_n - scale, basis.vanishing_moments, ndim=1)
        side = 2**scale
        atoms = line.atoms(np.arange(2 * side))
        for e in (0, 1):
            for m in range(side):
                ids[(scale, e, m)] = len(supports)
                supports.append(atoms[e * side + m] != 0)
    supports = np.asarray(supports)
    pixels = np.arange(n)
    circular = np.abs(pixels[:, None] - pixels[None, :])
    circular = np.minimum(circular, n - circular)
    gaps = np.empty((len(supports), len(supports)), dtype=np.int64)
    for a, support in enumerate(supports):
        reach = circular[support].min(axis=0)
        gaps[a] = np.array([reach[other].min() for other in supports])
    return ids, gaps


def _factor_ids(index_map: IndexMap, ids: dict) -> np.ndarray:
    """``(N, d)`` factor ids of every coefficient."""
    scales = index_map.scales
    positions = index_map.positions
    codes = index_map.orientation_codes
    out = np.empty_like(positions)
    for i in range(index_map.count):
        for axis in range(index_map.ndim):
            out[i, axis] = ids[(int(scales[i]), int(codes[i, axis]), int(positions[i, axis]))]
    return out


@dataclass(frozen=True)
class DecayReport:
    """
    Result of `verify_decay`.

    Args:
        constant: Smallest ``C`` for which the bound holds on every pair.
        violations: Nonzero entries where the bound vanishes.
        worst_pair: ``(row, col)`` attaining ``constant``.
        radius: Kernel truncation radius used for the support check.
        max_beyond_radius: Largest ``|theta|`` among pairs whose supports are
            more than ``radius`` apart once blurred.
    """

    constant: float
    violations: int
    worst_pair: tuple[int, int]
    radius: float | None = None
    max_beyond_radius: float | None = None
    pairs: int = 0
    per_scale: dict = field(default_factory=dict)


def verify_decay(
    theta: ThetaMatrix,
    params: DecayBoundParams | None = None,
    *,
    radius: float | None = None,
    atol: float = 1e-13,
    chunk: int = 256,
) -> DecayReport:
    """
    Fit the constant of the decay bound on a dense Theta.

    Args:
        theta: Dense Theta with its basis.
        params: Bound parameters; by default ``M`` from the basis,
            ``f(t) = 1 / (1 + t)`` and ``C = 1``. ``C`` is ignored: the
            fitted constant replaces it.
        radius: Truncation radius of the kernel. When given, the report
            includes the largest entry whose atom supports are farther apart.
        atol: Magnitude below which an entry counts as zero.
        chunk: Columns processed at once.

    Returns:
        The fitted constant, the violation count, per scale-pair constants
        and the support check.
    """
    basis = theta.basis
    if basis is None:
        raise BadShapeError("verify_decay needs Theta with its basis")
    params = params or DecayBoundParams(basis.vanishing_moments, ndim=basis.ndim)
    mapping = basis.index_map
    scales = mapping.scales.astype(np.float64)
    positions = mapping.positions.astype(np.float64)
    magnitude = np.abs(theta.values)

    factors = gaps = None
    if radius is not None:
        ids, gaps = _support_arcs(basis)
        factors = _factor_ids(mapping, ids)

    best, worst_pair, violations = 0.0, (0, 0), 0
    beyond = 0.0 if radius is not None else None
    per_scale: dict[tuple[int, int], float] = {}
    for start in range(0, mapping.count, chunk):
        cols = np.arange(start, min(start + chunk, mapping.count))
        dist = _index_distance(
            scales[None, cols], positions[None, cols], scales[:, None], positions[:, None], params.c
        )
        bound = params.scale_factor(scales[:, None], scales[None, cols]) * params.bound(dist)
        block = magnitude[:, cols]
        positive = bound > 0
        violations += int(np.count_nonzero(~positive & (block > atol)))
        ratio = np.where(positive, block / np.where(positive, bound, 1.0), 0.0)
        row, local = np.unravel_index(np.argmax(ratio), ratio.shape)
        if ratio[row, local] > best:
            best, worst_pair = float(ratio[row, local]), (int(row), int(cols[local]))
        for k in mapping.scales_present():
            for j in mapping.scales_present():
                sub = ratio[np.ix_(mapping.scales == k, mapping.scales[cols] == j)]
                if sub.size:
                    per_scale[(j, k)] = max(per_scale.get((j, k), 0.0), float(sub.max()))
        if factors is not None:
            gap = np.zeros(block.shape, dtype=np.int64)
            for axis in range(basis.ndim):
                gap = np.maximum(gap, gaps[factors[:, axis][:, None], factors[cols, axis][None, :]])
            far = gap / basis.size > radius + 1e-12
            if np.any(far):
                beyond = max(beyond, float(block[far].max()))
    logger.info("Fitted decay constant %.4g (%d violations)", best, violations)
    return DecayReport(
        constant=best,
        violations=violations,
        worst_pair=worst_pair,
        radius=radius,
        max_beyond_radius=beyond,
        pairs=mapping.count**2,
        per_scale=per_scale,
    )


@dataclass(frozen=True)
class ScalingReport:
    """
    Growth of ``nnz`` and decay of the spectral error of thresholded Theta.

    Slopes are least-squares fits in log-log coordinates against ``eta``.
    """

    etas: np.ndarray
    nnz: np.ndarray
    errors: np.ndarray
    nnz_slope: float
    error_slope: float
    predicted_nnz_slope: float
    predicted_error_slope: float


def scaling_trend(
    theta: ThetaMatrix,
    etas: Sequence[float] | None = None,
    *,
    decades: float = 4.0,
    points: int = 9,
) -> ScalingReport:
    """
    Threshold Theta at decreasing ``eta`` and fit how ``nnz`` and the error scale.

    The bound predicts ``nnz ~ eta^(-d/(M+d))`` and
    ``error ~ eta^(M/(M+d))``.

    Args:
        theta: Dense Theta with its basis.
        etas: Thresholds; by default ``points`` values spread over ``decades``
            decades below the largest entry.
    """
    basis = theta.basis
    if basis is None:
        raise BadShapeError("scaling_trend needs Theta with its basis")
    peak = float(np.abs(theta.values).max())
    if etas is None:
        etas = peak * np.logspace(-1.0, -1.0 - decades, points)
    etas = np.asarray(etas, dtype=np.float64)
    nnz, errors = [], []
    for eta in etas:
        sparse = threshold_abs(theta, eta=eta)
        nnz.append(sparse.nnz)
        errors.append(theta_spectral_error(theta, sparse).value)
    nnz = np.asarray(nnz, dtype=np.float64)
    errors = np.asarray(errors)
    usable = (nnz > 0) & (errors > 0)
    log_eta = np.log(etas[usable])
    nnz_slope = float(np.polyfit(log_eta, np.log(nnz[usable]), 1)[0]) if usable.sum() > 1 else float("nan")
    error_slope = float(np.polyfit(log_eta, np.log(errors[usable]), 1)[0]) if usable.sum() > 1 else float("nan")
    m, d = basis.vanishing_moments, basis.ndim
    return ScalingReport(
        etas=etas,
        nnz=nnz,
        errors=errors,
        nnz_slope=nnz_slope,
        error_slope=error_slope,
        predicted_nnz_slope=-d / (m + d),
        predicted_error_slope=m / (m + d),
    )
