import numpy as np
import pytest

from waveblur.blur_kernel import ConvolutionField, GaussianIsotropicField, IdentityField, apply_dense
from waveblur.errors import BadShapeError, CorruptFileError, TooLargeError
from waveblur.theta_builder import (
    SparseTheta,
    apply_sparse,
    apply_sparse_adjoint,
    build_sparse_theta,
    build_theta,
    load_theta,
    save_theta,
    select_top_k,
    threshold_abs,
)
from waveblur.wavelet import WaveletBasis


@pytest.fixture(scope="module")
def basis():
    return WaveletBasis(16, 2, 2)


@pytest.fixture(scope="module")
def field():
    return GaussianIsotropicField(16, reference_size=16, support=5)


@pytest.fixture(scope="module")
def theta(field, basis):
    return build_theta(field, basis)


def _transform_matrix(basis):
    """Rows are the coefficients of the canonical images."""
    eye = np.eye(basis.count).reshape((basis.count,) + basis.image_shape)
    return basis.forward(eye)


def test_identity_field_gives_identity(basis):
    theta = build_theta(IdentityField(16), basis)
    assert np.max(np.abs(theta.values - np.eye(basis.count))) <= 1e-10


def test_theta_matches_conjugated_operator(theta, field, basis):
    """Test Theta = W H W^T against the dense blur matrix"""
    forward = _transform_matrix(basis)
    expected = forward.T @ field.matrix.toarray() @ forward
    assert np.max(np.abs(theta.values - expected)) <= 1e-9
    assert theta.basis == basis
    assert "GaussianIsotropicField" in theta.provenance


def test_build_is_independent_of_chunks_and_workers(theta, field, basis):
    other = build_theta(field, basis, chunk=7, workers=3)
    assert np.allclose(other.values, theta.values, rtol=0, atol=1e-14)


def test_haar_entries_decay_across_scales():
    """Test that entries between distant scales are smaller than within a scale"""
    basis = WaveletBasis(32, 4, 1)
    theta = build_theta(ConvolutionField(32, variance=2.0, reference_size=32), basis)
    scales = basis.index_map.scales
    gap = np.abs(scales[:, None] - scales[None, :])
    magnitude = np.abs(theta.values)
    assert magnitude[gap == 3].max() < magnitude[gap == 0].max()


def test_build_theta_too_large(field, basis):
    with pytest.raises(TooLargeError):
        build_theta(field, basis, budget=100)


def test_build_theta_grid_mismatch(field):
    with pytest.raises(BadShapeError):
        build_theta(field, WaveletBasis(32, 2, 1))


def test_select_top_k_ties_prefer_smaller_index():
    scores = np.array([3.0, 1.0, 3.0, 2.0, 3.0])
    assert select_top_k(scores, 2).tolist() == [0, 2]
    assert select_top_k(scores, 4).tolist() == [0, 2, 3, 4]
    assert select_top_k(scores, 0).size == 0
    assert select_top_k(scores, 10).tolist() == [0, 1, 2, 3, 4]


def test_threshold_matches_exhaustive_top_k():
    """Test K = 5 against a full sort on an 8 x 8 matrix"""
    values = np.random.default_rng(3).standard_normal((8, 8))
    sparse = threshold_abs(values, k=5)
    order = sorted(range(64), key=lambda i: (-abs(values.flat[i]), i))[:5]
    expected = np.zeros_like(values)
    expected.flat[order] = values.flat[order]
    assert sparse.nnz == 5
    assert np.array_equal(sparse.toarray(), expected)


def test_threshold_by_level():
    values = np.array([[0.5, -2.0], [1.0, 0.1]])
    sparse = threshold_abs(values, eta=1.0)
    assert sparse.nnz == 2
    assert np.array_equal(sparse.toarray(), [[0.0, -2.0], [1.0, 0.0]])


def test_threshold_needs_exactly_one_rule():
    with pytest.raises(ValueError):
        threshold_abs(np.eye(2))
    with pytest.raises(ValueError):
        threshold_abs(np.eye(2), k=1, eta=0.5)


def test_threshold_keeps_explicit_zeros():
    """Test that retained zero entries still count"""
    sparse = threshold_abs(np.zeros((3, 3)), k=4)
    assert sparse.nnz == 4


def test_full_theta_reproduces_dense_apply(theta, field, basis):
    u = np.random.default_rng(4).random((16, 16))
    full = threshold_abs(theta, k=basis.count**2)
    expected = apply_dense(field, u)
    out = apply_sparse(full, basis, u)
    assert np.linalg.norm(out - expected) <= 1e-8 * np.linalg.norm(expected)


def test_empty_operator_gives_zero_image(basis):
    out = apply_sparse(SparseTheta.empty(basis.count), basis, np.ones((16, 16)))
    assert np.array_equal(out, np.zeros((16, 16)))


def test_identity_pattern_gives_back_image(basis):
    identity = build_theta(IdentityField(16), basis)
    sparse = threshold_abs(identity, k=basis.count)
    u = np.random.default_rng(5).random((16, 16))
    assert np.allclose(apply_sparse(sparse, basis, u), u, atol=1e-10)


def test_apply_sparse_shape_mismatch(theta):
    with pytest.raises(BadShapeError):
        apply_sparse(threshold_abs(theta, k=10), WaveletBasis(8, 2, 1), np.ones((8, 8)))


def test_sparse_adjoint(theta, basis):
    sparse = threshold_abs(theta, k=2000)
    rng = np.random.default_rng(6)
    u, v = rng.random((16, 16)), rng.random((16, 16))
    lhs = np.vdot(apply_sparse(sparse, basis, u), v)
    rhs = np.vdot(u, apply_sparse_adjoint(sparse, basis, v))
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_streaming_build_matches_thresholded_theta(field, basis):
    """Test that the streaming top-K build equals thresholding the dense matrix"""
    dense = build_theta(field, basis, chunk=64)
    expected = threshold_abs(dense, k=1500)
    streamed = build_sparse_theta(field, basis, 1500, chunk=64)
    rows, cols, values = streamed.triplets()
    exp_rows, exp_cols, exp_values = expected.triplets()
    assert streamed.nnz == 1500
    assert np.array_equal(rows, exp_rows)
    assert np.array_equal(cols, exp_cols)
    assert np.allclose(values, exp_values, rtol=0, atol=1e-15)


def test_from_triplets_validation():
    with pytest.raises(BadShapeError, match="Duplicate"):
        SparseTheta.from_triplets(4, [0, 0], [1, 1], [1.0, 2.0])
    with pytest.raises(BadShapeError, match="out of range"):
        SparseTheta.from_triplets(4, [4], [0], [1.0])


def test_file_round_trip(theta, basis, tmp_path):
    sparse = threshold_abs(theta, k=300)
    path = tmp_path / "theta.wbth"
    save_theta(path, sparse)
    loaded = load_theta(path, basis)
    for a, b in zip(loaded.triplets(), sparse.triplets()):
        assert np.array_equal(a, b)
    assert loaded.basis == basis


def test_builds_are_byte_identical(field, basis, tmp_path):
    """Test that two builds of the same operator produce the same file"""
    first, second = tmp_path / "a.wbth", tmp_path / "b.wbth"
    threshold_abs(build_theta(field, basis), k=500).save(first)
    threshold_abs(build_theta(field, basis), k=500).save(second)
    assert first.read_bytes() == second.read_bytes()


def test_truncated_file(theta, tmp_path):
    path = tmp_path / "theta.wbth"
    threshold_abs(theta, k=10).save(path)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(CorruptFileError):
        SparseTheta.load(path)
