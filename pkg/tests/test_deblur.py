import numpy as np
import pytest

from waveblur.blur_kernel import ConvolutionField, IdentityField
from waveblur.deblur import (
    DegradationSpec,
    SolverParams,
    constraint_level,
    deblur_experiment,
    degrade,
    divergence,
    gaussian_noise,
    gradient,
    tv,
    tv_deblur,
)
from waveblur.images import synth_image
from waveblur.metrics import psnr
from waveblur.operators import exact_operator


def _identity(u):
    return u


def test_noise_statistics():
    noise = gaussian_noise((256, 256), 0.1, seed=1)
    assert noise.shape == (256, 256)
    assert abs(noise.mean()) < 0.002
    assert noise.std() == pytest.approx(0.1, rel=0.02)


def test_noise_is_reproducible():
    """Test that the same seed gives the same bits and other seeds differ"""
    first = gaussian_noise((17, 5), 1.0, seed=42)
    assert np.array_equal(first, gaussian_noise((17, 5), 1.0, seed=42))
    assert not np.array_equal(first, gaussian_noise((17, 5), 1.0, seed=43))


def test_noiseless_degradation_is_exact():
    field = ConvolutionField(16, reference_size=16)
    operator = exact_operator(field)
    u = synth_image("gaussian_bumps", 16)
    assert np.array_equal(degrade(operator.apply, u, 0.0, seed=3), operator.apply(u))


def test_degradation_adds_seeded_noise():
    u = np.zeros((8, 8))
    v = degrade(_identity, u, 0.5, seed=9)
    assert np.array_equal(v, gaussian_noise((8, 8), 0.5, seed=9))


def test_tv_values():
    """Test the periodic TV of a constant, a step and a ramp"""
    assert tv(np.full((8, 8), 0.3)) == 0.0
    step = np.zeros((8, 8))
    step[:, 4:] = 1.0
    assert tv(step) == pytest.approx(16.0)
    assert tv(synth_image("ramp", 16)) == pytest.approx(32.0)


def test_divergence_is_negative_adjoint_of_gradient():
    rng = np.random.default_rng(0)
    u = rng.standard_normal((16, 16))
    p = rng.standard_normal((2, 16, 16))
    assert np.vdot(gradient(u), p) == pytest.approx(-np.vdot(u, divergence(p)), abs=1e-10)


def test_constraint_level():
    params = SolverParams()
    assert constraint_level(0.1, 100, params) == pytest.approx(1.05)
    assert constraint_level(0.0, 100, params) == pytest.approx(1e-5)


@pytest.mark.parametrize(
    "kwargs",
    [{"epsilon": -0.1}, {"max_iter": 0}, {"tol": 0.0}, {"tau": -1.0}, {"dual_step": 0.0}],
)
def test_bad_solver_params(kwargs):
    with pytest.raises(ValueError):
        SolverParams(**kwargs)


def test_bad_noise_level():
    with pytest.raises(ValueError):
        DegradationSpec(noise_std=-0.1)


def test_steps_must_satisfy_stability_condition():
    v = np.zeros((8, 8))
    with pytest.raises(ValueError, match="tau"):
        tv_deblur(_identity, _identity, v, 0.1, SolverParams(tau=1.0, dual_step=1.0))


def test_noiseless_identity_restoration():
    """Test that without blur or noise the restoration stays at the data"""
    u = synth_image("gaussian_bumps", 16, seed=2)
    result = tv_deblur(_identity, _identity, u, 0.0)
    assert result.alpha == pytest.approx(1e-7 * 256)
    assert psnr(u, result.image) > 60.0


def test_restoration_reduces_total_variation():
    u = synth_image("gaussian_bumps", 32, seed=4)
    v = degrade(_identity, u, 0.1, seed=5)
    result = tv_deblur(_identity, _identity, v, 0.1)
    assert tv(result.image) < tv(v)
    assert psnr(u, result.image) > psnr(u, v)


def test_non_convergence_is_reported(caplog):
    v = degrade(_identity, synth_image("checkerboard", 16), 0.1, seed=6)
    result = tv_deblur(_identity, _identity, v, 0.1, SolverParams(max_iter=2, tol=1e-12))
    assert not result.converged
    assert result.iterations == 2
    assert "stopped after 2 iterations" in caplog.text


def test_deblur_experiment_rows():
    field = ConvolutionField(16, variance=1.0, reference_size=16)
    exact = exact_operator(field)
    identity = exact_operator(IdentityField(16))
    image = synth_image("checkerboard", 16)
    rows, images = deblur_experiment(
        image,
        exact,
        [exact, identity],
        DegradationSpec(noise_std=0.01, seed=1),
        SolverParams(max_iter=50),
        experiment="deblur-test",
    )
    assert [row.method for row in rows] == ["degraded", "exact", "exact"]
    assert {row.metric_name for row in rows} == {"psnr"}
    assert {row.experiment for row in rows} == {"deblur-test"}
    assert rows[0].value == pytest.approx(psnr(image, images[0]))
    assert len(images) == len(rows)
    assert rows[1].wall_ms > 0
    assert rows[1].budget_over_N == pytest.approx(exact.budget_ops / 256)
