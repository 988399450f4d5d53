"""
Uniform handles on the operators being compared.
"""

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .blur_kernel import KernelField, apply_adjoint_dense, apply_dense
from .metrics import SpectralNormResult, spectral_norm
from .theta_builder import SparseTheta, apply_sparse, apply_sparse_adjoint
from .wavelet import WaveletBasis
from .wc_baseline import WindowedConvolution, WindowLayout, wc_opcount

ImageMap = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LinearApproximation:
    """
    A linear operator on images with its adjoint and cost.

    Args:
        name: Method name used in reports.
        budget_ops: Operations per application (``nnz`` for sparse matrices).
        apply: ``u -> A u``.
        adjoint: ``v -> A^T v``.
        shape: Image shape.
    """

    name: str
    budget_ops: float
    apply: ImageMap
    adjoint: ImageMap
    shape: tuple[int, ...]

    @property
    def budget_over_n(self) -> float:
        return self.budget_ops / float(np.prod(self.shape))


def exact_operator(field: KernelField) -> LinearApproximation:
    """The space-domain quadrature operator ``H``."""
    return LinearApproximation(
        name="exact",
        budget_ops=float(field.matrix.nnz),
        apply=lambda u: apply_dense(field, u),
        adjoint=lambda v: apply_adjoint_dense(field, v),
        shape=(field.grid_size,) * field.ndim,
    )


def sparse_operator(
    sparse: SparseTheta, basis: WaveletBasis, name: str
) -> LinearApproximation:
    """``Psi S Psi^*``; the cost counts the retained entries only."""
    return LinearApproximation(
        name=name,
        budget_ops=float(sparse.nnz),
        apply=lambda u: apply_sparse(sparse, basis, u),
        adjoint=lambda v: apply_sparse_adjoint(sparse, basis, v),
        shape=basis.image_shape,
    )


def wc_operator(layout: WindowLayout, field: KernelField) -> LinearApproximation:
    """Windowed convolution; the cost follows `wc_opcount`."""
    operator = WindowedConvolution(layout, field)
    overlap = int(layout.overlap * 100)
    return LinearApproximation(
        name=f"wc[l={layout.level},overlap={overlap}%]",
        budget_ops=wc_opcount(layout.size, layout.level, field.window),
        apply=operator.apply,
        adjoint=operator.adjoint,
        shape=(layout.size, layout.size),
    )


def difference_norm(
    reference: LinearApproximation, other: LinearApproximation, **kwargs
) -> SpectralNormResult:
    """``||A - B||_2`` by power iteration."""
    return spectral_norm(
        lambda u: reference.apply(u) - other.apply(u),
        lambda v: reference.adjoint(v) - other.adjoint(v),
        reference.shape,
        **kwargs,
    )
