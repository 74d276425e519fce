"""
Tests for denoiser oracles and score extraction.
"""

import subprocess
from pathlib import Path

import numpy as np
import pytest

from scoredvi.errors import ArgumentError, ConfigError, DomainError, OracleError
from scoredvi.oracles import (
    ExternalOracle,
    GaussPriorOracle,
    GmmPriorOracle,
    IdentityOracle,
    external_denoise,
    score_from_denoiser,
)
from scoredvi.oracles.external import ExternalTimeout


def test_identity_oracle_has_zero_score(small_image):
    """Test G(x) = x and the resulting zero score."""
    var = np.full(small_image.shape, 0.01)
    oracle = IdentityOracle()
    np.testing.assert_array_equal(oracle.denoise(small_image, var), small_image)
    np.testing.assert_array_equal(score_from_denoiser(small_image, var, oracle), 0.0)


def test_gauss_oracle_closed_form(small_image):
    """Test the Gaussian posterior mean and the score -(x - m) / (s2 + v)."""
    oracle = GaussPriorOracle(0.5, 0.04)
    var = np.full(small_image.shape, 0.01)
    expected = (0.04 * small_image + 0.01 * 0.5) / 0.05
    np.testing.assert_allclose(oracle.denoise(small_image, var), expected, rtol=1e-12)
    np.testing.assert_allclose(
        score_from_denoiser(small_image, var, oracle),
        -(small_image - 0.5) / 0.05,
        rtol=1e-10,
    )


def test_gauss_oracle_zero_variance_is_identity(small_image):
    """Test that a zero noise variance returns the input."""
    oracle = GaussPriorOracle(0.5, 0.04)
    out = oracle.denoise(small_image, np.zeros(small_image.shape))
    np.testing.assert_array_equal(out, small_image)


def test_gauss_oracle_validation(small_image):
    """Test bad priors, shape mismatches and negative variances."""
    with pytest.raises(ArgumentError):
        GaussPriorOracle(0.5, 0.0)

    oracle = GaussPriorOracle(np.zeros((1, 2, 2)), 0.1)
    with pytest.raises(ArgumentError):
        oracle.denoise(small_image, np.full(small_image.shape, 0.01))

    with pytest.raises(ArgumentError):
        GaussPriorOracle(0.5, 0.1).denoise(small_image, -np.ones(small_image.shape))
    with pytest.raises(ArgumentError):
        GaussPriorOracle(0.5, 0.1).denoise(small_image, np.ones((1, 2, 2)))


def test_score_needs_positive_variance(small_image):
    """Test that the score is undefined at zero noise."""
    with pytest.raises(DomainError):
        score_from_denoiser(small_image, np.zeros(small_image.shape), IdentityOracle())


def test_single_component_gmm_matches_gauss(small_image):
    """Test that a one-component GMM reduces to the Gaussian oracle."""
    var = np.full(small_image.shape, 0.02)
    gmm = GmmPriorOracle([1.0], [0.3], [0.05])
    gauss = GaussPriorOracle(0.3, 0.05)
    np.testing.assert_allclose(gmm.denoise(small_image, var), gauss.denoise(small_image, var), rtol=1e-12)


def test_gmm_score_matches_smoothed_density_gradient(rng):
    """Test Tweedie's identity against a finite difference of log p_sigma."""
    gmm = GmmPriorOracle([0.3, 0.7], [0.2, 0.8], [0.01, 0.02])
    x = rng.uniform(0.0, 1.0, (1, 3, 3))
    var = np.full(x.shape, 0.005)
    h = 1e-6
    numeric = (gmm.smoothed_logpdf(x + h, var) - gmm.smoothed_logpdf(x - h, var)) / (2 * h)
    np.testing.assert_allclose(score_from_denoiser(x, var, gmm), numeric, rtol=1e-5, atol=1e-6)


def test_gmm_is_stable_far_from_components():
    """Test log-space responsibilities for inputs far in the tails."""
    gmm = GmmPriorOracle([0.5, 0.5], [0.0, 1.0], [1e-4, 1e-4])
    x = np.full((1, 1, 2), 50.0)
    out = gmm.denoise(x, np.full(x.shape, 1e-4))
    assert np.all(np.isfinite(out))


def test_gmm_validation():
    """Test GMM parameter checks."""
    with pytest.raises(ArgumentError):
        GmmPriorOracle([0.5, 0.5], [0.0], [1.0, 1.0])
    with pytest.raises(ArgumentError):
        GmmPriorOracle([0.4, 0.4], [0.0, 1.0], [1.0, 1.0])
    with pytest.raises(ArgumentError):
        GmmPriorOracle([0.5, 0.5], [0.0, 1.0], [1.0, 0.0])


def test_gmm_fit_recovers_two_modes(rng):
    """Test EM on a well-separated bimodal sample."""
    values = np.concatenate(
        [0.2 + 0.02 * rng.standard_normal(3000), 0.8 + 0.02 * rng.standard_normal(1000)]
    )
    gmm = GmmPriorOracle.fit(values, components=2, rng=rng)
    order = np.argsort(gmm.means)
    np.testing.assert_allclose(gmm.means[order], [0.2, 0.8], atol=0.01)
    np.testing.assert_allclose(gmm.weights[order], [0.75, 0.25], atol=0.02)

    with pytest.raises(ArgumentError):
        GmmPriorOracle.fit([0.5], components=2)


def test_validity_range_clamps_score(small_image):
    """Test that the score uses the clamped variance."""
    oracle = GaussPriorOracle(0.5, 0.04)
    oracle.validity_range = (0.1, 0.2)
    var = np.full(small_image.shape, 1e-6)
    np.testing.assert_allclose(
        score_from_denoiser(small_image, var, oracle),
        -(small_image - 0.5) / (0.04 + 0.01),
        rtol=1e-10,
    )


def test_external_oracle_identity(copy_denoiser, small_image):
    """Test the subprocess protocol with a copying denoiser."""
    oracle = ExternalOracle(copy_denoiser, timeout=60)
    assert oracle.concurrent_safe is False
    out = oracle.denoise(small_image, np.full(small_image.shape, 0.01))
    np.testing.assert_allclose(out, small_image, rtol=1e-6)

    out = external_denoise(small_image, np.full(small_image.shape, 0.01), copy_denoiser)
    assert out.shape == small_image.shape


def test_external_oracle_failure(failing_denoiser, small_image):
    """Test that a nonzero exit raises with the status and stderr."""
    oracle = ExternalOracle(failing_denoiser, timeout=60)
    with pytest.raises(OracleError) as exc_info:
        oracle.denoise(small_image, np.full(small_image.shape, 0.01))
    assert exc_info.value.returncode == 1
    assert "model file missing" in exc_info.value.stderr


def test_external_oracle_retries_only_timeouts(failing_denoiser, small_image, mocker):
    """Test that timeouts are retried and nonzero exits are not."""
    mocker.patch("scoredvi.oracles.external.wait_exponential", return_value=lambda state: 0)
    noise_var = np.full(small_image.shape, 0.01)

    timeout = subprocess.TimeoutExpired(cmd="denoise", timeout=1.0)
    run = mocker.patch("scoredvi.oracles.external.subprocess.run", side_effect=timeout)
    with pytest.raises(ExternalTimeout):
        ExternalOracle("denoise {in} {out} {nv}", timeout=1.0, retries=3).denoise(
            small_image, noise_var
        )
    assert run.call_count == 3

    mocker.stopall()
    spy = mocker.spy(subprocess, "run")
    with pytest.raises(OracleError):
        ExternalOracle(failing_denoiser, timeout=60, retries=3).denoise(small_image, noise_var)
    assert spy.call_count == 1


def test_external_oracle_template_validation():
    """Test that all placeholders are required."""
    with pytest.raises(ArgumentError):
        ExternalOracle("denoise {in} {out}")
    with pytest.raises(ArgumentError):
        ExternalOracle("denoise {in} {out} {nv}", retries=0)


@pytest.mark.parametrize(
    "template",
    [
        "denoise {in} {out} {nv} {model}",
        "awk '{print}' {in} {out} {nv}",
        "denoise {0} {in} {out} {nv}",
        "denoise {in} {out} {nv} }",
    ],
)
def test_external_oracle_literal_braces(template):
    """Test that stray braces in a command template are reported as config errors."""
    with pytest.raises(ConfigError) as exc_info:
        ExternalOracle(template)
    assert exc_info.value.key == "oracle.command"


def test_external_oracle_doubled_braces():
    """Test that doubled braces expand to literal ones."""
    oracle = ExternalOracle("awk '{{print}}' {in} {out} {nv}")
    command = oracle._build_command(Path("a.sdvi"), Path("b.sdvi"), Path("c.sdvi"))
    assert command == "awk '{print}' a.sdvi b.sdvi c.sdvi"


def test_gauss_oracle_reference_point():
    """Test the hand-computed posterior mean 0.6 and score -10."""
    oracle = GaussPriorOracle(0.5, 0.01)
    x = np.full((1, 1, 1), 0.7)
    var = np.full((1, 1, 1), 0.01)
    assert oracle.denoise(x, var)[0, 0, 0] == pytest.approx(0.6)
    assert score_from_denoiser(x, var, oracle)[0, 0, 0] == pytest.approx(-10.0)
    at_mean = score_from_denoiser(np.full((1, 1, 1), 0.5), var, oracle)
    assert at_mean[0, 0, 0] == pytest.approx(0.0, abs=1e-12)


def test_flat_prior_limit_returns_input(small_image):
    """Test that a huge prior variance leaves the input unchanged."""
    oracle = GaussPriorOracle(0.5, 1e9)
    out = oracle.denoise(small_image, np.full(small_image.shape, 0.01))
    np.testing.assert_allclose(out, small_image, atol=1e-6)
