"""
Sparsity patterns chosen from the data of Theta.

`greedy_weighted` minimizes the weighted column-norm error

    max_i ||(Theta - S)^(i)||_2 / sigma_i

over ``K``-sparse ``S`` by repeatedly moving the largest remaining entry of
the worst column into ``S``. `wei_rule` keeps the ``K`` largest entries of
``Theta W^-1``.
"""

import heapq
import logging
from dataclasses import dataclass

import numpy as np

from .errors import BadSchemeError, BadShapeError
from .theta_builder import SparseTheta, ThetaMatrix, select_top_k
from .wavelet import IndexMap, WaveletBasis

logger = logging.getLogger(__name__)

SIGMA_SCHEMES = ("uniform", "dyadic", "bv1d", "custom")


@dataclass(frozen=True, eq=False)
class SigmaWeights:
    """
    Per-coefficient weights ``sigma_i > 0``.

    Args:
        values: Weight of every flat coefficient.
        scheme: Name of the scheme that produced them.
    """

    values: np.ndarray
    scheme: str

    def __post_init__(self):
        if np.any(~np.isfinite(self.values)) or np.any(self.values <= 0):
            raise BadSchemeError("Weights must be finite and positive")

    def __len__(self) -> int:
        return self.values.size

    def at_scale(self, index_map: IndexMap, scale: int) -> float:
        """Weight shared by all coefficients of ``scale``."""
        values = self.values[index_map.scales == scale]
        if not np.allclose(values, values[0]):
            raise BadSchemeError(f"Weights are not constant on scale {scale}")
        return float(values[0])


def make_sigma(
    scheme: str,
    index_map: IndexMap,
    custom: dict[int, float] | np.ndarray | None = None,
) -> SigmaWeights:
    """
    Weights for a named scheme.

    Args:
        scheme: ``uniform`` (1), ``dyadic`` (``2**j``), ``bv1d`` (``2**(j/2)``)
            or ``custom``.
        index_map: Layout giving the scale ``j`` of each coefficient.
        custom: For ``custom``, either a mapping ``scale -> weight`` or an
            array with one weight per coefficient.

    Raises:
        BadSchemeError: On an unknown scheme or invalid custom weights.
    """
    scales = index_map.scales.astype(np.float64)
    match scheme:
        case "uniform":
            values = np.ones_like(scales)
        case "dyadic":
            values = 2.0**scales
        case "bv1d":
            values = 2.0 ** (scales / 2)
        case "custom":
            if custom is None:
                raise BadSchemeError("The custom scheme needs weights")
            if isinstance(custom, dict):
                try:
                    values = np.array(
                        [float(custom[int(j)]) for j in index_map.scales]
                    )
                except KeyError as error:
                    raise BadSchemeError(f"No weight for scale {error}") from error
            else:
                values = np.asarray(custom, dtype=np.float64)
                if values.shape != scales.shape:
                    raise BadSchemeError(
                        f"Expected {scales.size} weights, got {values.shape!r}"
                    )
        case _:
            raise BadSchemeError(f"Unknown weighting scheme: {scheme!r}")
    return SigmaWeights(values, scheme)


@dataclass(frozen=True, eq=False)
class _ColumnOrder:
    """Entries of every column sorted by decreasing magnitude (ties: lower row)."""

    size: int
    rows: np.ndarray
    values: np.ndarray
    starts: np.ndarray
    ends: np.ndarray


def _column_order(theta) -> tuple[_ColumnOrder, WaveletBasis | None]:
    if isinstance(theta, SparseTheta):
        rows, cols, values = theta.triplets()
        order = np.lexsort((rows, -np.abs(values), cols))
        indptr = theta.matrix.indptr.astype(np.int64)
        return (
            _ColumnOrder(theta.size, rows[order], values[order], indptr[:-1], indptr[1:]),
            theta.basis,
        )
    if isinstance(theta, ThetaMatrix):
        dense, basis = theta.values, theta.basis
    else:
        dense, basis = np.asarray(theta, dtype=np.float64), None
    if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
        raise BadShapeError(f"Expected a square matrix, got {dense.shape!r}")
    size = dense.shape[0]
    order = np.argsort(-np.abs(dense), axis=0, kind="stable")
    values = np.take_along_axis(dense, order, axis=0)
    starts = np.arange(size, dtype=np.int64) * size
    return (
        _ColumnOrder(size, order.T.ravel(), values.T.ravel(), starts, starts + size),
        basis,
    )


@dataclass(frozen=True, eq=False)
class GreedySelection:
    """Entries picked by `greedy_selection`, in the order they were picked."""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    size: int
    basis: WaveletBasis | None = None


def greedy_selection(
    theta: "ThetaMatrix | SparseTheta | np.ndarray",
    sigma: SigmaWeights | np.ndarray,
    k: int,
) -> GreedySelection:
    """
    Run the greedy weighted selection and return entries in selection order.

    Each step takes the column ``l`` with the largest residual
    ``gamma_l = ||Delta^(l)||^2 / sigma_l^2`` (ties: lowest column), moves its
    largest remaining entry (ties: lowest row) into the selection and
    subtracts that entry's contribution from ``gamma_l``.

    Args:
        theta: Dense Theta, or a sparse superset of candidate entries.
        sigma: Column weights.
        k: Number of entries to select.

    Returns:
        The selected entries, in selection order.
    """
    columns, basis = _column_order(theta)
    weights = np.asarray(getattr(sigma, "values", sigma), dtype=np.float64)
    if weights.shape != (columns.size,):
        raise BadShapeError(
            f"Expected {columns.size} weights, got {weights.shape!r}"
        )
    squares = columns.values**2
    owner = np.repeat(np.arange(columns.size), columns.ends - columns.starts)
    gamma = np.bincount(owner, weights=squares, minlength=columns.size) / weights**2
    cursor = columns.starts.copy()
    heap = [(-gamma[col], col) for col in range(columns.size) if cursor[col] < columns.ends[col]]
    heapq.heapify(heap)

    picked = []
    while len(picked) < k and heap:
        _, col = heapq.heappop(heap)
        position = cursor[col]
        picked.append(position)
        gamma[col] -= squares[position] / weights[col] ** 2
        cursor[col] += 1
        if cursor[col] < columns.ends[col]:
            heapq.heappush(heap, (-gamma[col], col))
    picked = np.asarray(picked, dtype=np.int64)
    logger.debug("Greedy selection picked %d entries", picked.size)
    return GreedySelection(
        columns.rows[picked], owner[picked], columns.values[picked], columns.size, basis
    )


def greedy_weighted(
    theta: "ThetaMatrix | SparseTheta | np.ndarray",
    sigma: SigmaWeights | np.ndarray,
    k: int,
) -> SparseTheta:
    """
    ``K``-sparse approximation of Theta minimizing the weighted column error.

    See `greedy_selection`. On a sparse superset the result is only as good
    as the candidates it contains.
    """
    selection = greedy_selection(theta, sigma, k)
    return SparseTheta.from_triplets(
        selection.size,
        selection.rows,
        selection.cols,
        selection.values,
        selection.basis,
    )


def wei_rule(
    theta: "ThetaMatrix | SparseTheta | np.ndarray",
    weights: SigmaWeights | np.ndarray,
    k: int,
) -> SparseTheta:
    """
    Keep the ``k`` largest entries of ``|Theta_ij| / w_j`` (ties: row-major order).

    A `SparseTheta` is treated as Theta restricted to its stored entries, so
    the result matches the dense one whenever those entries include it.

    Raises:
        BadSchemeError: If a weight is not positive.
    """
    w = np.asarray(getattr(weights, "values", weights), dtype=np.float64)
    if np.any(w <= 0):
        raise BadSchemeError("Weights must be positive")
    if isinstance(theta, SparseTheta):
        size = theta.size
        rows, cols, values = theta.triplets()
        order = np.argsort(rows * size + cols, kind="stable")
        rows, cols, values = rows[order], cols[order], values[order]
        keep = select_top_k(np.abs(values) / w[cols], k)
        return SparseTheta.from_triplets(size, rows[keep], cols[keep], values[keep], theta.basis)
    if isinstance(theta, ThetaMatrix):
        dense, basis = theta.values, theta.basis
    else:
        dense, basis = np.asarray(theta, dtype=np.float64), None
    size = dense.shape[0]
    flat = select_top_k(np.abs(dense) / w[None, :], k)
    rows, cols = np.divmod(flat, size)
    return SparseTheta.from_triplets(size, rows, cols, dense.ravel()[flat], basis)
