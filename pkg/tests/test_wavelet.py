import numpy as np
import pytest

from waveblur.errors import BadIndexError, BadShapeError, UnsupportedOrderError
from waveblur.wavelet import (
    WaveletBasis,
    WaveletCoeffs,
    WaveletIndex,
    dwt,
    idwt,
    index_map,
    make_daubechies_filter,
    moment_sums,
    orientations,
    scale_profile,
    synthesize_atom,
)


@pytest.fixture
def image():
    return np.random.default_rng(0).random((32, 32))


@pytest.mark.parametrize("order", range(1, 11))
def test_daubechies_filter_taps(order):
    """Test that filters have 2M unit-norm taps summing to sqrt(2)"""
    pair = make_daubechies_filter(order)
    assert pair.lowpass.size == 2 * order
    assert pair.highpass.size == 2 * order
    assert pair.support_length == 2 * order - 1
    assert np.sum(pair.lowpass) == pytest.approx(np.sqrt(2), abs=1e-10)
    assert np.linalg.norm(pair.lowpass) == pytest.approx(1.0, abs=1e-10)
    assert pair.name == f"db{order}"


@pytest.mark.parametrize("order", range(1, 11))
def test_highpass_vanishing_moments(order):
    """Test that the first M moments of the high-pass filter vanish"""
    pair = make_daubechies_filter(order)
    assert np.all(np.abs(moment_sums(pair.highpass, order)) <= 1e-8)


def test_lowpass_moment_does_not_vanish():
    """Test that moment sums detect a non-vanishing moment"""
    pair = make_daubechies_filter(2)
    assert abs(moment_sums(pair.lowpass, 1)[0]) > 1.0


@pytest.mark.parametrize("order", [0, 11, -1])
def test_unsupported_order(order):
    with pytest.raises(UnsupportedOrderError, match="vanishing moments"):
        make_daubechies_filter(order)


def test_unsupported_order_is_value_error():
    with pytest.raises(ValueError):
        make_daubechies_filter(12)


def test_filter_taps_are_read_only():
    """Test that cached filter taps cannot be modified"""
    pair = make_daubechies_filter(3)
    assert make_daubechies_filter(3) is pair
    with pytest.raises(ValueError):
        pair.lowpass[0] = 0.0


def test_orientations():
    assert orientations(2) == ((0, 1), (1, 0), (1, 1))
    assert orientations(1) == ((1,),)


@pytest.mark.parametrize("order", [1, 2, 4])
def test_perfect_reconstruction(image, order):
    """Test that idwt inverts dwt"""
    pair = make_daubechies_filter(order)
    coeffs = dwt(image, 3, pair)
    assert np.max(np.abs(idwt(coeffs, pair) - image)) <= 1e-10


@pytest.mark.parametrize("order", [1, 2, 4])
def test_energy_preservation(image, order):
    """Test that the transform is orthonormal"""
    coeffs = dwt(image, 3, make_daubechies_filter(order))
    assert np.linalg.norm(coeffs.values) == pytest.approx(
        np.linalg.norm(image), rel=1e-10
    )


def test_perfect_reconstruction_ten_moments():
    """Test the longest filter on a grid wider than its support"""
    pair = make_daubechies_filter(10)
    u = np.random.default_rng(1).random((64, 64))
    coeffs = dwt(u, 1, pair)
    assert np.linalg.norm(coeffs.values) == pytest.approx(np.linalg.norm(u), rel=1e-10)
    assert np.max(np.abs(idwt(coeffs, pair) - u)) <= 1e-10


def test_one_dimensional_transform():
    pair = make_daubechies_filter(2)
    u = np.random.default_rng(2).random(64)
    coeffs = dwt(u, 3, pair)
    assert coeffs.ndim == 1
    assert coeffs.values.shape == (64,)
    assert np.allclose(idwt(coeffs, pair), u, atol=1e-10)


def test_constant_image_has_no_detail():
    """Test that a constant image only fills the coarse block"""
    coeffs = dwt(np.ones((16, 16)), 2, make_daubechies_filter(2))
    mapping = index_map(16, 2)
    coarse = mapping.subbands[0]
    assert np.allclose(coeffs.values[coarse.size :], 0.0, atol=1e-12)
    assert np.linalg.norm(coeffs.values[: coarse.size]) == pytest.approx(16.0)


@pytest.mark.parametrize(
    "shape, levels",
    [((6, 6), 1), ((8, 16), 1), ((8, 8), 4), ((8, 8), 0), ((2, 2, 2), 1)],
)
def test_dwt_bad_shape(shape, levels):
    with pytest.raises(BadShapeError):
        dwt(np.zeros(shape), levels, make_daubechies_filter(1))


def test_idwt_bad_coefficient_count():
    with pytest.raises(BadShapeError):
        idwt(WaveletCoeffs(np.zeros(10), 8, 2), make_daubechies_filter(1))


def test_index_map_layout():
    """Test the coarse-first, scale-major, orientation-minor layout"""
    mapping = index_map(8, 2)
    assert mapping.count == 64
    assert mapping.coarsest_scale == 1
    assert mapping.finest_scale == 2
    layout = [(b.scale, b.orientation, b.offset, b.side) for b in mapping.subbands]
    assert layout == [
        (1, (0, 0), 0, 2),
        (1, (0, 1), 4, 2),
        (1, (1, 0), 8, 2),
        (1, (1, 1), 12, 2),
        (2, (0, 1), 16, 4),
        (2, (1, 0), 32, 4),
        (2, (1, 1), 48, 4),
    ]
    assert list(mapping.scales_present()) == [1, 2]


def test_index_map_is_a_bijection():
    mapping = index_map(16, 3)
    seen = set()
    for i in range(mapping.count):
        index = mapping.from_flat(i)
        assert mapping.to_flat(index) == i
        seen.add((index.scale, index.position, index.orientation))
    assert len(seen) == mapping.count


def test_index_map_vectorized_views():
    mapping = index_map(8, 2)
    assert mapping.scales[0] == 1
    assert mapping.scales[-1] == 2
    assert tuple(mapping.positions[17]) == (0, 1)
    assert tuple(mapping.orientation_codes[20]) == (0, 1)
    assert mapping.scale_of(63) == 2


@pytest.mark.parametrize(
    "index",
    [
        WaveletIndex(5, (0, 0), (0, 1)),
        WaveletIndex(2, (4, 0), (1, 1)),
        WaveletIndex(2, (0, 0), (0, 0)),
        WaveletIndex(1, (0,), (1, 0)),
    ],
)
def test_to_flat_bad_index(index):
    with pytest.raises(BadIndexError):
        index_map(8, 2).to_flat(index)


def test_from_flat_out_of_range():
    with pytest.raises(BadIndexError):
        index_map(8, 2).from_flat(64)


def test_haar_diagonal_atom():
    """Test the finest Haar diagonal atom at the origin"""
    atom = synthesize_atom(WaveletIndex(2, (0, 0), (1, 1)), 8, 3, make_daubechies_filter(1))
    expected = np.zeros((8, 8))
    expected[:2, :2] = [[0.5, -0.5], [-0.5, 0.5]]
    assert np.allclose(atom, expected, atol=1e-12)


def test_haar_orientation_follows_axis():
    """Test that orientation (1, 0) is high-pass along rows"""
    atom = synthesize_atom(WaveletIndex(2, (1, 2), (1, 0)), 8, 3, make_daubechies_filter(1))
    expected = np.zeros((8, 8))
    expected[2:4, 4:6] = [[0.5, 0.5], [-0.5, -0.5]]
    assert np.allclose(atom, expected, atol=1e-12)


def test_atoms_are_orthonormal():
    basis = WaveletBasis(16, 2, 2)
    atoms = basis.atoms(np.arange(basis.count)).reshape(basis.count, -1)
    assert np.allclose(atoms @ atoms.T, np.eye(basis.count), atol=1e-10)


def test_basis_batches(image):
    """Test that the batched transforms match dwt and idwt"""
    basis = WaveletBasis(32, 3, 2)
    batch = np.stack([image, image.T])
    flat = basis.forward(batch)
    assert flat.shape == (2, 1024)
    assert np.allclose(flat[1], dwt(image.T, 3, basis.filter).values)
    assert np.allclose(basis.inverse(flat), batch, atol=1e-10)


def test_basis_rejects_mismatched_image():
    basis = WaveletBasis(16, 2, 1)
    with pytest.raises(BadShapeError):
        basis.forward(np.zeros((8, 8)))
    with pytest.raises(BadShapeError):
        basis.inverse(np.zeros(100))


def test_scale_profile_of_smooth_image_decays():
    """Test that detail amplitudes shrink at fine scales for a smooth image"""
    x = (np.arange(64) + 0.5) / 64
    smooth = np.sin(2 * np.pi * x)[:, None] * np.cos(2 * np.pi * x)[None, :]
    profile = scale_profile(dwt(smooth, 4, make_daubechies_filter(2)))
    assert sorted(profile) == [2, 3, 4, 5]
    assert profile[5][0] < profile[2][0]
    for peak, mean in profile.values():
        assert 0 <= mean <= peak
