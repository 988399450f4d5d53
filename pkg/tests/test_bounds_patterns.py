import itertools

import numpy as np
import pytest

from waveblur.blur_kernel import GaussianIsotropicField
from waveblur.bounds_patterns import (
    DecayBoundParams,
    NeighborhoodSet,
    Relation,
    SparsityMask,
    decay_bound,
    expand_pattern,
    greedy_neighborhood,
    multiscale_shift,
    project_theta,
    relation_multiplicity,
    scaling_trend,
    verify_decay,
    wavelet_distance,
    wrap_shift,
)
from waveblur.errors import BadShapeError, BadSpecError, BudgetExceededError
from waveblur.sparsification import make_sigma
from waveblur.theta_builder import build_theta, threshold_abs
from waveblur.wavelet import WaveletBasis, WaveletIndex, index_map


@pytest.fixture(scope="module")
def theta():
    basis = WaveletBasis(16, 2, 1)
    field = GaussianIsotropicField(16, reference_size=16, support=5)
    return build_theta(field, basis)


@pytest.fixture
def mapping():
    return index_map(16, 2)


def test_wrap_shift():
    assert wrap_shift(3, 2, 2) == -1
    assert wrap_shift((-3, 2), 2, 3) == (1, -2)
    assert wrap_shift((0, 1), 0, 4) == (0, 0)


def test_multiscale_shift():
    coarse = WaveletIndex(1, (1, 0), (0, 1))
    fine = WaveletIndex(2, (3, 1), (1, 1))
    assert multiscale_shift(coarse, fine) == (0, 0)
    assert multiscale_shift(fine, coarse) == (0, 0)
    assert multiscale_shift(WaveletIndex(2, (0, 0), (0, 1)), fine) == (3, 1)


def test_wavelet_distance():
    lam = WaveletIndex(2, (0, 0), (0, 1))
    assert wavelet_distance(lam, lam, 1.0) == 0.0
    far = WaveletIndex(2, (2, 0), (0, 1))
    assert wavelet_distance(lam, far, 1.0) == pytest.approx(0.25)


def test_decay_bound_value():
    """Test the scale factor and f(0) = 1 for a zero shift"""
    params = DecayBoundParams(vanishing_moments=1)
    assert decay_bound(params, 1, 1, (0, 0)) == pytest.approx(2.0**-3)
    assert decay_bound(params, 2, 2, (0, 0)) < decay_bound(params, 1, 1, (0, 0))
    assert decay_bound(params, 2, 2, (2, 0)) < decay_bound(params, 2, 2, (1, 0))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"vanishing_moments": 0},
        {"constant": 0.0},
        {"bound": lambda t: 1.0 + t},
    ],
)
def test_bad_decay_params(kwargs):
    with pytest.raises(BadSpecError):
        DecayBoundParams(**kwargs)


def test_neighborhood_text_round_trip(tmp_path):
    nbh = NeighborhoodSet((Relation(2, 2, (0, 0)), Relation(2, 3, (1, -1))))
    assert nbh.to_text() == "2 2 0 0\n2 3 1 -1\n"
    path = tmp_path / "nbh.txt"
    nbh.save(path)
    assert NeighborhoodSet.load(path) == nbh
    assert Relation(2, 3, (1, -1)) in nbh


def test_neighborhood_text_skips_comments():
    nbh = NeighborhoodSet.from_text("# relations\n\n1 1 0 -1  # first\n")
    assert list(nbh) == [Relation(1, 1, (0, -1))]


@pytest.mark.parametrize(
    "text",
    ["1 1 0\n", "1 1 a b\n", "1 1 2 0\n", "1 1 0 0\n1 1 0 0\n"],
)
def test_neighborhood_bad_text(text):
    with pytest.raises(BadSpecError):
        NeighborhoodSet.from_text(text)


def test_relation_multiplicity(mapping):
    assert relation_multiplicity(mapping, 2, 2) == 4
    assert relation_multiplicity(mapping, 2, 3) == 3 * 4
    assert relation_multiplicity(mapping, 3, 2) == 4


def test_greedy_neighborhood_covers_budget(mapping):
    sigma = make_sigma("dyadic", mapping)
    nbh = greedy_neighborhood(DecayBoundParams(), sigma, 500, mapping)
    mask = expand_pattern(nbh, mapping)
    assert nbh.predicted_nnz >= 500
    assert len(mask) == nbh.predicted_nnz
    pairs = set(zip(mask.rows.tolist(), mask.cols.tolist()))
    assert len(pairs) == len(mask)


def test_greedy_neighborhood_starts_with_diagonal(mapping):
    """Test that the first relation of each scale is the zero shift"""
    nbh = greedy_neighborhood(DecayBoundParams(), make_sigma("uniform", mapping), 1, mapping)
    first = nbh.relations[0]
    assert first.shift == (0, 0)
    assert first.column_scale == first.row_scale


def test_greedy_neighborhood_full_budget(mapping):
    total = mapping.count**2
    nbh = greedy_neighborhood(DecayBoundParams(), make_sigma("dyadic", mapping), total, mapping)
    assert nbh.predicted_nnz == total
    assert len(expand_pattern(nbh, mapping)) == total


def test_greedy_neighborhood_budget_too_large(mapping):
    with pytest.raises(BudgetExceededError):
        greedy_neighborhood(DecayBoundParams(), make_sigma("dyadic", mapping), 16**4 + 1, mapping)


def test_greedy_neighborhood_dimension_mismatch(mapping):
    with pytest.raises(BadShapeError):
        greedy_neighborhood(DecayBoundParams(ndim=1), np.ones(256), 10, mapping)


def test_expand_zero_shift_same_scale():
    """Test a diagonal relation expands to every orientation pair at equal positions"""
    mapping = index_map(8, 2)
    mask = expand_pattern(NeighborhoodSet((Relation(2, 2, (0, 0)),)), mapping)
    assert len(mask) == 16 * 3 * 3
    assert (16, 16) in mask
    assert (32, 16) in mask
    assert (17, 16) not in mask


def test_project_theta(theta):
    mask = SparsityMask.full(theta.size)
    full = project_theta(theta, mask)
    assert np.array_equal(full.toarray(), threshold_abs(theta, k=theta.size**2).toarray())
    with pytest.raises(BadShapeError):
        project_theta(np.eye(3), mask)


def test_project_theta_on_sparse_superset(theta):
    """Test that mask positions missing from a superset are kept with value zero"""
    relations = (Relation(3, 3, (0, 0)), Relation(2, 3, (1, 0)))
    mask = expand_pattern(NeighborhoodSet(relations), theta.basis.index_map)
    superset = threshold_abs(theta, k=4 * theta.size)
    stored = superset.toarray() != 0
    dense = project_theta(theta, mask).toarray()
    sparse = project_theta(superset, mask)
    assert sparse.nnz == len(mask)
    assert np.array_equal(sparse.toarray(), np.where(stored, dense, 0.0))
    assert not np.array_equal(sparse.toarray(), dense)
    with pytest.raises(BadShapeError):
        project_theta(threshold_abs(np.eye(3), k=3), mask)


def test_verify_decay(theta):
    field_radius = 2 / 16
    report = verify_decay(theta, radius=field_radius)
    assert 0 < report.constant < np.inf
    assert report.violations == 0
    assert report.pairs == 256**2
    assert report.max_beyond_radius <= 1e-12
    row, col = report.worst_pair
    assert abs(theta.values[row, col]) > 0
    assert max(report.per_scale.values()) == pytest.approx(report.constant)


def test_verify_decay_needs_basis():
    with pytest.raises(BadShapeError):
        verify_decay(threshold_abs(np.eye(2), k=1))


@pytest.mark.slow
def test_scaling_trend(theta):
    report = scaling_trend(theta, decades=3.0, points=5)
    assert report.etas.size == 5
    assert np.all(np.diff(report.nnz) >= 0)
    assert report.nnz_slope < 0
    assert report.predicted_nnz_slope == pytest.approx(-2 / 3)
    assert report.predicted_error_slope == pytest.approx(1 / 3)


def _neighborhood_by_search(params, weights, k, mapping):
    """Relation selection rescanning every unused relation at each step"""
    ndim = mapping.ndim
    scales = list(mapping.scales_present())
    options = {}
    for j in scales:
        options[j] = []
        for row_scale in scales:
            period = 2 ** min(j, row_scale)
            axis = range(-(period // 2), period - period // 2)
            for shift in itertools.product(axis, repeat=ndim):
                weight = decay_bound(params, j, row_scale, shift) ** 2 * relation_multiplicity(
                    mapping, j, row_scale
                )
                options[j].append((weight, row_scale, shift))
    gamma = {j: sum(w for w, _, _ in options[j]) / weights[j] ** 2 for j in scales}
    columns_at = {j: len(mapping.subbands_at(j)) * 2 ** (ndim * j) for j in scales}
    chosen, covered = [], 0
    while covered < k:
        j = max((s for s in scales if options[s]), key=lambda s: (gamma[s], -s))
        best = min(
            options[j],
            key=lambda o: (-o[0], o[1], max((abs(v) for v in o[2]), default=0), o[2]),
        )
        options[j].remove(best)
        weight, row_scale, shift = best
        chosen.append(Relation(j, row_scale, shift))
        covered += columns_at[j] * relation_multiplicity(mapping, j, row_scale)
        gamma[j] -= weight / weights[j] ** 2
    return chosen, covered


@pytest.mark.parametrize("scheme, k", [("dyadic", 900), ("uniform", 3000), ("bv1d", 12000)])
def test_greedy_neighborhood_matches_search(mapping, scheme, k):
    """Test the selected relations against a search over every unused relation"""
    params = DecayBoundParams(vanishing_moments=2)
    sigma = make_sigma(scheme, mapping)
    weights = {j: sigma.at_scale(mapping, j) for j in mapping.scales_present()}
    nbh = greedy_neighborhood(params, sigma, k, mapping)
    chosen, covered = _neighborhood_by_search(params, weights, k, mapping)
    assert list(nbh.relations) == chosen
    assert nbh.predicted_nnz == covered


def test_greedy_neighborhood_prefers_small_shifts_among_equal_weights(mapping):
    """Test that equal-weight relations are ordered by sup norm of the shift before the shift"""
    params = DecayBoundParams(vanishing_moments=1)
    assert decay_bound(params, 3, 3, (0, 0)) == decay_bound(params, 3, 3, (-1, -1))
    nbh = greedy_neighborhood(params, make_sigma("uniform", mapping), 16**4, mapping)
    same_scale = [r.shift for r in nbh.relations if r.column_scale == r.row_scale == 3]
    assert same_scale.index((0, 0)) < same_scale.index((-1, -1))
    assert same_scale.index((-1, -1)) < same_scale.index((-1, 0))


def test_expand_one_dimensional_relation():
    """Test that relation (1, (2, 0)) pairs psi_1,m with psi_2,2m and psi_2,2m+1"""
    mapping = index_map(8, 3, ndim=1)
    nbh = NeighborhoodSet((Relation(1, 2, (0,)),), ndim=1)
    mask = expand_pattern(nbh, mapping)
    pairs = set(zip(mask.rows.tolist(), mask.cols.tolist()))
    col = mapping.to_flat(WaveletIndex(1, (1,), (1,)))
    rows = {mapping.to_flat(WaveletIndex(2, (n,), (1,))) for n in (2, 3)}
    assert {(row, col) for row in rows} <= pairs
    assert len(pairs) == len(mask) == 4
    assert all(mapping.scale_of(c) == 1 and mapping.scale_of(r) == 2 for r, c in pairs)


def test_expand_pattern_matches_pairwise_shifts(mapping):
    """Test the expanded mask against the wrapped shift of every (row, column) pair"""
    nbh = greedy_neighborhood(DecayBoundParams(), make_sigma("dyadic", mapping), 2000, mapping)
    relations = set(nbh.relations)
    indices = list(mapping)
    expected = set()
    for col, lam in enumerate(indices):
        for row, mu in enumerate(indices):
            shift = wrap_shift(multiscale_shift(lam, mu), lam.scale, mu.scale)
            if Relation(lam.scale, mu.scale, shift) in relations:
                expected.add((row, col))
    mask = expand_pattern(nbh, mapping)
    assert set(zip(mask.rows.tolist(), mask.cols.tolist())) == expected
    assert len(mask) == len(expected) == nbh.predicted_nnz
