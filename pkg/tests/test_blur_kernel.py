import math

import numpy as np
import pytest
from scipy.signal import fftconvolve

from waveblur.blur_kernel import (
    ConvolutionField,
    GaussianIsotropicField,
    GaussianRotationField,
    IdentityField,
    TabulatedPSFGrid,
    apply_adjoint_dense,
    apply_dense,
    assemble_dense,
    eval_kernel,
    load_psf_grid,
    make_field,
    sample_psf_grid,
    save_psf_grid,
    scaled_window,
)
from waveblur.errors import (
    BadShapeError,
    BadSpecError,
    CorruptFileError,
    SingularCovarianceError,
    TooLargeError,
)


@pytest.fixture
def invariant_field():
    """Spatially invariant Gaussian with a 7-pixel window on a 32 grid"""
    return ConvolutionField(32, variance=4.0, support=7, reference_size=32)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def test_identity_field_is_identity(rng):
    field = IdentityField(16)
    u = rng.random((16, 16))
    assert np.array_equal(apply_dense(field, u), u)
    assert np.array_equal(apply_adjoint_dense(field, u), u)


def test_gaussian_peak_value():
    """Test that x = y gives 1 / (2 pi sigma^2) in 2D"""
    field = ConvolutionField(64, variance=4.0, reference_size=64, covariance_floor=False)
    sigma2 = 4.0 / 64**2
    value = eval_kernel(field, [0.5, 0.5], [0.5, 0.5])
    assert value == pytest.approx(1.0 / (2 * math.pi * sigma2), rel=1e-12)


def test_truncation(invariant_field):
    """Test that the kernel vanishes beyond the truncation radius"""
    r = invariant_field.radius_pixels
    assert r == 3
    y = np.array([0.5, 0.5])
    assert eval_kernel(invariant_field, y + [r / 32, 0], y) > 0
    assert eval_kernel(invariant_field, y + [(r + 1) / 32, 0], y) == 0.0
    assert eval_kernel(invariant_field, y + [0, -(r + 1) / 32], y) == 0.0


@pytest.mark.parametrize(
    "support, n, reference, expected",
    [(11, 256, 256, 11), (21, 64, 256, 5), (11, 16, 256, 3), (11, 64, 256, 3)],
)
def test_scaled_window(support, n, reference, expected):
    assert scaled_window(support, n, reference) == expected


def test_scaled_window_rejects_even_support():
    with pytest.raises(BadSpecError, match="odd"):
        scaled_window(10, 64, 256)


def test_rotation_field_center_is_finite():
    """Test that the covariance floor regularizes the rotation center"""
    field = GaussianRotationField(64)
    center = np.array([0.5, 0.5])
    at_center = field.psf(center)
    nearby = field.psf(center + [1e-6, 0.0])
    assert np.all(np.isfinite(at_center))
    assert np.all(at_center >= 0)
    assert np.allclose(at_center, nearby, rtol=1e-3)


def test_singular_covariance_without_floor():
    field = ConvolutionField(32, variance=0.0, covariance_floor=False)
    with pytest.raises(SingularCovarianceError):
        eval_kernel(field, [0.5, 0.5], [0.5, 0.5])


def test_invariant_field_matches_fft_convolution(invariant_field, rng):
    """Test that the quadrature equals a zero-padded convolution"""
    u = rng.random((32, 32))
    psf = invariant_field.psf(np.array([0.5, 0.5]))
    expected = fftconvolve(u, psf, mode="same")
    assert np.max(np.abs(apply_dense(invariant_field, u) - expected)) <= 1e-8


def test_normalized_field_preserves_constants():
    """Test that normalized PSFs leave a constant unchanged away from the border"""
    field = ConvolutionField(32, variance=4.0, support=7, reference_size=32, normalize=True)
    out = apply_dense(field, np.ones((32, 32)))
    r = field.radius_pixels
    assert np.allclose(out[r:-r, r:-r], 1.0, atol=1e-12)
    assert np.all(out[0] < 1.0)


def test_symmetric_kernel_is_self_adjoint(invariant_field, rng):
    u = rng.random((32, 32))
    assert np.allclose(
        apply_adjoint_dense(invariant_field, u), apply_dense(invariant_field, u), atol=1e-10
    )


def test_adjoint_identity(rng):
    """Test <Hu, v> = <u, H*v> on a spatially varying field"""
    field = GaussianIsotropicField(32, reference_size=32, support=7)
    for _ in range(10):
        u = rng.random((32, 32))
        v = rng.random((32, 32))
        lhs = np.vdot(apply_dense(field, u), v)
        rhs = np.vdot(u, apply_adjoint_dense(field, v))
        assert abs(lhs - rhs) <= 1e-9


def test_rows_respect_truncation_window():
    field = GaussianRotationField(32, reference_size=64)
    counts = np.diff(field.matrix.indptr)
    assert counts.max() <= field.window**2
    assert np.all(field.matrix.data >= 0)


def test_apply_dense_rejects_wrong_grid(invariant_field):
    with pytest.raises(BadShapeError):
        apply_dense(invariant_field, np.zeros((16, 16)))


def test_assemble_dense(invariant_field):
    field = ConvolutionField(16, variance=1.0, reference_size=16)
    dense = assemble_dense(field)
    assert dense.matrix.shape == (256, 256)
    assert np.array_equal(dense.matrix, field.matrix.toarray())
    assert dense.grid_size == 16


def test_assemble_dense_too_large():
    with pytest.raises(TooLargeError):
        assemble_dense(ConvolutionField(128))


def test_make_field():
    field = make_field({"kind": "gaussian_isotropic_field", "grid_size": 32, "slope": 1.0})
    assert isinstance(field, GaussianIsotropicField)
    assert field.window == 3
    assert field.slope == 1.0


@pytest.mark.parametrize(
    "spec, message",
    [
        ({"kind": "gibson_lanni", "grid_size": 32}, "Unknown kernel kind"),
        ({"kind": "convolution"}, "grid_size"),
        ({"kind": "convolution", "grid_size": 32, "sigma": 2}, "Invalid parameters"),
        ({"kind": "gaussian_isotropic_field", "grid_size": 32, "slope": -1}, "slope"),
    ],
)
def test_make_field_bad_spec(spec, message):
    with pytest.raises(BadSpecError, match=message):
        make_field(spec)


def test_tabulated_grid_reproduces_invariant_field(invariant_field, rng):
    """Test that identical tabulated PSFs give back the sampled field"""
    patches = sample_psf_grid(invariant_field, 4)
    assert patches.shape == (4, 4, 7, 7)
    tabulated = TabulatedPSFGrid(32, patches=patches)
    u = rng.random((32, 32))
    assert np.allclose(apply_dense(tabulated, u), apply_dense(invariant_field, u), atol=1e-12)


def test_tabulated_grid_interpolates_between_anchors():
    """Test that PSFs between two anchors are blended bilinearly"""
    patches = np.zeros((2, 2, 3, 3))
    patches[0, :, 1, 1] = 1.0
    patches[1, :, 1, 1] = 3.0
    field = TabulatedPSFGrid(16, patches=patches)
    midway = field.psf(np.array([0.5, 0.5]))
    assert midway[1, 1] == pytest.approx(2.0)
    assert field.psf(np.array([0.1, 0.5]))[1, 1] == pytest.approx(1.0)


def test_tabulated_grid_rejects_even_patches():
    with pytest.raises(BadSpecError):
        TabulatedPSFGrid(16, patches=np.ones((2, 2, 4, 4)))


def test_psf_grid_file_round_trip(invariant_field, tmp_path):
    patches = sample_psf_grid(invariant_field, 3)
    path = tmp_path / "grid.wbpsf"
    save_psf_grid(path, patches)
    assert np.array_equal(load_psf_grid(path), patches)
    field = make_field({"kind": "tabulated_psf_grid", "grid_size": 32, "path": str(path)})
    assert field.anchors == 3


def test_psf_grid_truncated_file(invariant_field, tmp_path):
    path = tmp_path / "grid.wbpsf"
    save_psf_grid(path, sample_psf_grid(invariant_field, 2))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CorruptFileError):
        load_psf_grid(path)
