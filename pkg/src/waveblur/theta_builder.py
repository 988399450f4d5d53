"""
Wavelet-domain representation of blurring operators.

``Theta[mu, lambda] = <H psi_lambda, psi_mu>``: column ``lambda`` is the
wavelet transform of the blurred atom ``psi_lambda``, so

    H u = Psi Theta Psi^* u.

Dense matrices are only built at desk scale. Larger grids go through
`build_sparse_theta`, which keeps a running global top-K while columns are
produced.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from tqdm import tqdm

from .blur_kernel import DEFAULT_DENSE_BUDGET, KernelField
from .errors import BadShapeError, TooLargeError
from .formats import decode_theta, encode_theta
from .wavelet import WaveletBasis

logger = logging.getLogger(__name__)

DEFAULT_CHUNK = 256


@dataclass(frozen=True, eq=False)
class ThetaMatrix:
    """
    Dense ``N x N`` matrix of ``H`` in a wavelet basis.

    Args:
        values: The matrix, rows ``mu`` and columns ``lambda``.
        basis: The wavelet basis.
        provenance: Description of the kernel field it was built from.
    """

    values: np.ndarray
    basis: WaveletBasis | None = None
    provenance: str = ""

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class SparseTheta:
    """
    Sparse approximation of Theta, stored column-compressed.

    Explicitly stored zeros count as entries: ``nnz`` is the number of
    retained positions.

    Args:
        matrix: ``N x N`` CSC matrix with sorted indices.
        basis: The wavelet basis the matrix acts in, when known.
    """

    matrix: sp.csc_array
    basis: WaveletBasis | None = None

    @classmethod
    def from_triplets(
        cls,
        size: int,
        rows: np.ndarray,
        cols: np.ndarray,
        values: np.ndarray,
        basis: WaveletBasis | None = None,
    ) -> "SparseTheta":
        """
        Build from unsorted triplets without merging or dropping zeros.

        Raises:
            BadShapeError: If an index is out of range or repeated.
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if rows.size and (
            rows.min() < 0 or cols.min() < 0 or rows.max() >= size or cols.max() >= size
        ):
            raise BadShapeError("Triplet index out of range")
        order = np.lexsort((rows, cols))
        rows, cols, values = rows[order], cols[order], values[order]
        if rows.size > 1 and np.any((np.diff(cols) == 0) & (np.diff(rows) == 0)):
            raise BadShapeError("Duplicate triplet positions")
        indptr = np.zeros(size + 1, dtype=np.int64)
        np.cumsum(np.bincount(cols, minlength=size), out=indptr[1:])
        matrix = sp.csc_array((values, rows, indptr), shape=(size, size))
        return cls(matrix, basis)

    @classmethod
    def empty(cls, size: int, basis: WaveletBasis | None = None) -> "SparseTheta":
        return cls.from_triplets(size, np.empty(0), np.empty(0), np.empty(0), basis)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return int(self.matrix.indptr[-1])

    def triplets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(rows, cols, values)`` sorted by column then row."""
        counts = np.diff(self.matrix.indptr)
        cols = np.repeat(np.arange(self.size), counts)
        return self.matrix.indices.astype(np.int64), cols, self.matrix.data

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    @classmethod
    def load(cls, path: str | Path, basis: WaveletBasis | None = None) -> "SparseTheta":
        """
        Load a WBTH1 file.

        Raises:
            CorruptFileError: If the file is malformed.
        """
        size, records = decode_theta(Path(path).read_bytes())
        return cls.from_triplets(
            size, records["row"], records["col"], records["value"], basis
        )

    def save(self, path: str | Path) -> None:
        """Write the matrix as a WBTH1 file."""
        rows, cols, values = self.triplets()
        Path(path).write_bytes(encode_theta(self.size, rows, cols, values))


def load_theta(path: str | Path, basis: WaveletBasis | None = None) -> SparseTheta:
    return SparseTheta.load(path, basis)


def save_theta(path: str | Path, sparse: SparseTheta) -> None:
    sparse.save(path)


def _check_basis(field: KernelField, basis: WaveletBasis) -> None:
    if field.grid_size != basis.size or field.ndim != basis.ndim:
        raise BadShapeError(
            f"Field grid {field.grid_size}^{field.ndim} does not match "
            f"basis grid {basis.size}^{basis.ndim}"
        )


def _blurred_columns(
    field: KernelField, basis: WaveletBasis, columns: np.ndarray
) -> np.ndarray:
    """Theta[:, columns], shape ``(N, len(columns))``."""
    atoms = basis.atoms(columns).reshape(columns.size, -1)
    blurred = (field.matrix @ atoms.T).T
    return basis.forward(blurred.reshape((columns.size,) + basis.image_shape)).T


def _chunks(count: int, chunk: int) -> list[np.ndarray]:
    return [np.arange(start, min(start + chunk, count)) for start in range(0, count, chunk)]


def build_theta(
    field: KernelField,
    basis: WaveletBasis,
    *,
    budget: int = DEFAULT_DENSE_BUDGET,
    chunk: int = DEFAULT_CHUNK,
    workers: int | None = None,
    progress: bool = False,
) -> ThetaMatrix:
    """
    Build the dense Theta matrix column by column.

    Column ``lambda`` is ``dwt(H idwt(e_lambda))``. Chunks of columns are
    computed in a thread pool; each chunk owns its columns, so the result
    does not depend on scheduling.

    Args:
        field: Kernel field sampled on the basis grid.
        basis: Wavelet basis.
        budget: Largest ``N`` allowed for a dense matrix.
        chunk: Columns per work item.
        workers: Thread count; the executor default when omitted.
        progress: Show a progress bar.

    Returns:
        The dense matrix.

    Raises:
        TooLargeError: If ``N`` exceeds ``budget``.
        BadShapeError: If the field and basis grids differ.
    """
    _check_basis(field, basis)
    count = basis.count
    if count > budget:
        raise TooLargeError(f"Dense Theta of side {count} exceeds budget {budget}")
    values = np.empty((count, count))
    chunks = _chunks(count, chunk)
    _ = field.matrix  # assembled once, then shared by the workers

    def fill(columns: np.ndarray) -> None:
        values[:, columns] = _blurred_columns(field, basis, columns)

    logger.info("Building Theta for %r in %r", field, basis)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(tqdm(pool.map(fill, chunks), total=len(chunks), disable=not progress))
    return ThetaMatrix(values, basis, repr(field))


def select_top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """
    Flat indices of the ``k`` largest scores, ties broken by smaller index.

    Args:
        scores: Array of scores (any shape, read row-major).
        k: Number of entries to keep.

    Returns:
        Sorted flat indices.
    """
    flat = np.asarray(scores).ravel()
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    if k >= flat.size:
        return np.arange(flat.size, dtype=np.int64)
    kth = np.partition(flat, flat.size - k)[flat.size - k]
    above = np.flatnonzero(flat > kth)
    ties = np.flatnonzero(flat == kth)[: k - above.size]
    return np.sort(np.concatenate([above, ties]))


def _dense_values(theta: "ThetaMatrix | np.ndarray") -> tuple[np.ndarray, WaveletBasis | None]:
    if isinstance(theta, ThetaMatrix):
        return theta.values, theta.basis
    values = np.asarray(theta, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise BadShapeError(f"Expected a square matrix, got {values.shape!r}")
    return values, None


def threshold_abs(
    theta: "ThetaMatrix | np.ndarray",
    *,
    k: int | None = None,
    eta: float | None = None,
) -> SparseTheta:
    """
    Keep the largest entries of Theta in absolute value.

    Exactly one of ``k`` (count) and ``eta`` (keep ``|theta| >= eta``) must be
    given. With ``k``, ties go to the smaller row-major flat index.
    """
    if (k is None) == (eta is None):
        raise ValueError("Pass exactly one of k and eta")
    values, basis = _dense_values(theta)
    size = values.shape[0]
    magnitude = np.abs(values)
    if k is not None:
        flat = select_top_k(magnitude, k)
    else:
        flat = np.flatnonzero(magnitude.ravel() >= eta)
    rows, cols = np.divmod(flat, size)
    return SparseTheta.from_triplets(size, rows, cols, values.ravel()[flat], basis)


def build_sparse_theta(
    field: KernelField,
    basis: WaveletBasis,
    k: int,
    *,
    chunk: int = 64,
    progress: bool = False,
) -> SparseTheta:
    """
    Build the ``k`` largest entries of Theta without storing it densely.

    Columns are produced chunk by chunk; entries below the current pool
    threshold are discarded and the pool is pruned back to ``k`` whenever it
    grows past ``2k``. The result equals ``threshold_abs(build_theta(...), k=k)``.
    """
    _check_basis(field, basis)
    count = basis.count
    pool_flat = np.empty(0, dtype=np.int64)
    pool_values = np.empty(0)
    floor = -np.inf

    logger.info("Streaming top-%d Theta entries for %r", k, field)
    for columns in tqdm(_chunks(count, chunk), disable=not progress):
        block = _blurred_columns(field, basis, columns)
        rows, local = np.nonzero(np.abs(block) >= floor)
        flat = rows * count + columns[local]
        pool_flat = np.concatenate([pool_flat, flat])
        pool_values = np.concatenate([pool_values, block[rows, local]])
        if pool_flat.size > 2 * k:
            pool_flat, pool_values = _prune(pool_flat, pool_values, k)
            floor = np.abs(pool_values).min() if k else np.inf
    pool_flat, pool_values = _prune(pool_flat, pool_values, k)
    rows, cols = np.divmod(pool_flat, count)
    return SparseTheta.from_triplets(count, rows, cols, pool_values, basis)


def _prune(
    flat: np.ndarray, values: np.ndarray, keep: int
) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(flat)
    flat, values = flat[order], values[order]
    chosen = select_top_k(np.abs(values), keep)
    return flat[chosen], values[chosen]


def _check_sparse_basis(sparse: SparseTheta, basis: WaveletBasis) -> None:
    if sparse.size != basis.count:
        raise BadShapeError(
            f"Operator of side {sparse.size} does not match basis with {basis.count} coefficients"
        )


def apply_sparse(sparse: SparseTheta, basis: WaveletBasis, u: np.ndarray) -> np.ndarray:
    """
    Apply ``Psi S Psi^*`` to an image.

    Raises:
        BadShapeError: If the operator, basis and image sizes disagree.
    """
    _check_sparse_basis(sparse, basis)
    return basis.inverse(sparse.matrix @ basis.forward(u))


def apply_sparse_adjoint(
    sparse: SparseTheta, basis: WaveletBasis, u: np.ndarray
) -> np.ndarray:
    """Apply ``Psi S^T Psi^*``."""
    _check_sparse_basis(sparse, basis)
    return basis.inverse(sparse.matrix.T @ basis.forward(u))
