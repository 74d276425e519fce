"""
Tests for synthetic scenes, noise models and the exact Gaussian ground truth.
"""

import numpy as np
import pytest
from scipy import integrate

from scoredvi.errors import ArgumentError, ConfigError, DomainError
from scoredvi.oracles import GmmPriorOracle
from scoredvi.synth import (
    NoiseModel,
    ScenePrior,
    add_noise,
    exact_posterior_gauss,
    expected_logp_gauss,
    gen_clean,
    mc_expected_logp,
    read_sidecar,
    verify_theorem1_dense,
    write_sidecar,
)


def test_gen_clean_scenes(rng):
    """Test the scene generators."""
    constant = gen_clean("constant", 4, value=0.3)
    assert constant.shape == (1, 4, 4)
    np.testing.assert_array_equal(constant, 0.3)

    ramp = gen_clean("ramp", (2, 5), channels=3)
    assert ramp.shape == (3, 2, 5)
    np.testing.assert_allclose(ramp[0, 0], [0.0, 0.25, 0.5, 0.75, 1.0])

    checker = gen_clean("checker", 3)
    np.testing.assert_array_equal(checker[0], [[0, 1, 0], [1, 0, 1], [0, 1, 0]])

    smooth = gen_clean("smooth-random", 32, rng)
    assert smooth.min() == pytest.approx(0.2)
    assert smooth.max() == pytest.approx(0.8)
    assert np.abs(np.diff(smooth, axis=2)).max() < 0.2

    with pytest.raises(ArgumentError):
        gen_clean("noise", 8)
    with pytest.raises(ArgumentError):
        gen_clean("constant", 0)


def test_noise_model_validation():
    """Test NoiseModel construction checks."""
    with pytest.raises(ArgumentError):
        NoiseModel(kind="poisson")
    with pytest.raises(DomainError):
        NoiseModel(sigma=-0.1)
    with pytest.raises(ArgumentError):
        NoiseModel(kind="non-iid")
    with pytest.raises(ArgumentError):
        NoiseModel(kind="correlated", kernel=np.ones((3, 3)))
    with pytest.raises(DomainError):
        NoiseModel(kind="signal-dependent", a=-1.0).variance(np.ones((1, 2, 2)))
    np.testing.assert_allclose(NoiseModel(kind="correlated").kernel, np.full((3, 3), 1.0 / 9.0))


def test_noise_model_variance():
    """Test per-pixel variances of each noise kind."""
    x = np.full((1, 2, 2), 0.5)
    np.testing.assert_allclose(NoiseModel(sigma=0.1).variance(x), 0.01)
    np.testing.assert_allclose(NoiseModel(kind="signal-dependent", a=0.02, b=0.001).variance(x), 0.011)
    var_map = np.array([[[0.01, 0.02], [0.03, 0.04]]])
    np.testing.assert_array_equal(NoiseModel(kind="non-iid", var_map=var_map).variance(x), var_map)


@pytest.mark.parametrize(
    "model",
    [
        NoiseModel(sigma=0.1),
        NoiseModel(kind="correlated", sigma=0.1),
        NoiseModel(kind="signal-dependent", a=0.02, b=0.001),
    ],
    ids=["awgn", "correlated", "signal-dependent"],
)
def test_add_noise_marginal_std(model):
    """Test the empirical noise std against the model."""
    clean = np.full((1, 128, 128), 0.5)
    noisy = add_noise(clean, model, np.random.default_rng(8))
    expected = np.sqrt(model.variance(clean).mean())
    assert np.std(noisy - clean) == pytest.approx(expected, rel=0.05)


def test_correlated_noise_is_correlated():
    """Test that neighbouring correlated noise samples covary."""
    clean = np.zeros((1, 128, 128))
    noise = add_noise(clean, NoiseModel(kind="correlated", sigma=0.1), np.random.default_rng(1))[0]
    corr = np.corrcoef(noise[:, :-1].ravel(), noise[:, 1:].ravel())[0, 1]
    # 3x3 box: adjacent fields share 6 of 9 taps
    assert corr == pytest.approx(2.0 / 3.0, abs=0.05)


def test_exact_posterior_gauss_reference():
    """Test the hand-computed conjugate posterior and the variance bound."""
    prior = ScenePrior(mean=0.5, var=0.01)
    mean, var = exact_posterior_gauss(np.full((1, 1, 1), 0.7), prior, 0.01)
    assert mean[0, 0, 0] == pytest.approx(0.6)
    assert var[0, 0, 0] == pytest.approx(0.005)

    rng = np.random.default_rng(3)
    s2 = rng.uniform(0.001, 0.1, (1, 4, 4))
    noise_var = rng.uniform(0.001, 0.1, (1, 4, 4))
    _, var = exact_posterior_gauss(rng.uniform(size=(1, 4, 4)), ScenePrior(mean=0.5, var=s2), noise_var)
    assert np.all(var < np.minimum(s2, noise_var) + 1e-15)

    with pytest.raises(DomainError):
        exact_posterior_gauss(np.zeros((1, 1, 1)), prior, -1.0)
    gmm = ScenePrior(kind="gmm", weights=[1.0], means=[0.5], variances=[0.01])
    with pytest.raises(ArgumentError):
        exact_posterior_gauss(np.zeros((1, 1, 1)), gmm, 0.01)


def test_exact_posterior_matches_sampling():
    """Test the posterior mean against direct conjugate sampling."""
    rng = np.random.default_rng(11)
    m, s2, noise_var, y = 0.4, 0.02, 0.01, 0.55
    x = m + np.sqrt(s2) * rng.standard_normal(1_000_000)
    tilde = x + np.sqrt(noise_var) * rng.standard_normal(x.size)
    near = np.abs(tilde - y) < 0.002
    mean, _ = exact_posterior_gauss(np.full((1, 1, 1), y), ScenePrior(mean=m, var=s2), noise_var)
    stderr = x[near].std() / np.sqrt(near.sum())
    assert abs(x[near].mean() - mean[0, 0, 0]) < 3 * stderr + 1e-3


def test_verify_dense_identity(rng):
    """Test the denoiser-residual score identity on random SPD problems."""
    for dim in (1, 4, 16):
        a = rng.standard_normal((dim, dim))
        prior_cov = a @ a.T / dim + 0.5 * np.eye(dim)
        noise_cov = np.diag(rng.uniform(0.1, 1.0, dim))
        assert verify_theorem1_dense(
            rng.standard_normal(dim), prior_cov, noise_cov, rng.standard_normal(dim)
        ) < 1e-10

    assert verify_theorem1_dense(np.zeros(2), np.eye(2), np.eye(2), np.zeros(2)) == 0.0


def test_verify_dense_identity_errors():
    """Test dimension, shape and definiteness checks."""
    with pytest.raises(ArgumentError):
        verify_theorem1_dense(np.zeros(65), np.eye(65), np.eye(65), np.zeros(65))
    with pytest.raises(ArgumentError):
        verify_theorem1_dense(np.zeros(2), np.eye(2), np.eye(2), np.zeros(3))
    with pytest.raises(ArgumentError):
        verify_theorem1_dense(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]), np.eye(2), np.zeros(2))
    with pytest.raises(ArgumentError):
        verify_theorem1_dense(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]), np.eye(2), np.zeros(2))


def test_mc_expected_logp_gauss_closed_form():
    """Test the Monte Carlo estimator against the Gaussian closed form."""
    mu = np.array([[[0.3, 0.6]]])
    sigma2 = np.array([[[0.01, 0.04]]])
    prior = ScenePrior(mean=0.5, var=0.02)
    mean, stderr = mc_expected_logp(mu, sigma2, prior, 1_000_000, np.random.default_rng(0))
    exact = float(np.sum(expected_logp_gauss(mu, sigma2, 0.5, 0.02)))
    assert abs(mean - exact) < 3 * stderr


def test_mc_expected_logp_delta_limit():
    """Test that a tiny sigma2 approaches log p_s(mu)."""
    prior = ScenePrior(mean=0.5, var=0.02)
    mu = np.full((1, 1, 1), 0.45)
    mean, stderr = mc_expected_logp(
        mu, 1e-10, prior, 100_000, np.random.default_rng(1), smoothing_var=0.0
    )
    exact = float(prior.smoothed_logpdf(mu, 0.0).sum())
    assert abs(mean - exact) < 3 * stderr + 1e-6
    with pytest.raises(DomainError):
        mc_expected_logp(mu, 0.0, prior, 10, np.random.default_rng(1))


def test_mc_expected_logp_gmm_quadrature():
    """Test a GMM prior against quadrature of N(x; mu, sigma2) log p_s(x)."""
    oracle = GmmPriorOracle([0.3, 0.7], [0.2, 0.7], [0.005, 0.01])
    prior = ScenePrior.from_gmm(oracle)
    mu, sigma2 = 0.45, 0.02
    mean, stderr = mc_expected_logp(
        np.full((1, 1, 1), mu), sigma2, prior, 1_000_000, np.random.default_rng(2)
    )

    def integrand(x):
        density = np.exp(-((x - mu) ** 2) / (2 * sigma2)) / np.sqrt(2 * np.pi * sigma2)
        return density * float(oracle.smoothed_logpdf(np.array([x]), sigma2)[0])

    half_width = 12 * np.sqrt(sigma2)
    exact, _ = integrate.quad(integrand, mu - half_width, mu + half_width, limit=200)
    assert abs(mean - exact) < 3 * stderr


def test_scene_prior_validation_and_sampling(rng):
    """Test ScenePrior construction, oracles and sampling."""
    with pytest.raises(ArgumentError):
        ScenePrior(kind="laplace")
    with pytest.raises(DomainError):
        ScenePrior(var=0.0)

    prior = ScenePrior(mean=0.5, var=0.01)
    samples = prior.sample((1, 200, 200), rng)
    assert samples.mean() == pytest.approx(0.5, abs=0.005)
    assert samples.var() == pytest.approx(0.01, rel=0.05)
    denoised = prior.oracle().denoise(np.full((1, 1, 1), 0.7), np.full((1, 1, 1), 0.01))
    assert denoised[0, 0, 0] == pytest.approx(0.6)

    gmm = ScenePrior(kind="gmm", weights=[0.5, 0.5], means=[0.2, 0.8], variances=[1e-4, 1e-4])
    samples = gmm.sample((1, 50, 50), rng)
    assert np.all((np.abs(samples - 0.2) < 0.06) | (np.abs(samples - 0.8) < 0.06))


def test_sidecar_round_trip(tmp_path):
    """Test that a sidecar reproduces the noise model and prior."""
    path = tmp_path / "scene-000.txt"
    kernel = np.array([[0.0, 0.25, 0.0], [0.25, 0.0, 0.25], [0.0, 0.25, 0.0]])
    noise = NoiseModel(kind="correlated", sigma=0.1, kernel=kernel)
    prior = ScenePrior(kind="gmm", weights=[0.4, 0.6], means=[0.2, 0.7], variances=[0.01, 0.02])
    write_sidecar(path, noise, prior, extra={"scene": "smooth-random", "seed": 3})

    read_noise, read_prior, extra = read_sidecar(path)
    assert read_noise.kind == "correlated"
    assert read_noise.sigma == 0.1
    np.testing.assert_array_equal(read_noise.kernel, kernel)
    np.testing.assert_array_equal(read_prior.means, [0.2, 0.7])
    assert extra == {"scene": "smooth-random", "seed": "3"}


def test_sidecar_tensor_fields(tmp_path):
    """Test that per-pixel variance maps and prior means go to tensor files."""
    path = tmp_path / "pair.txt"
    var_map = np.random.default_rng(0).uniform(0.001, 0.01, (1, 3, 4))
    mean = np.random.default_rng(1).uniform(size=(1, 3, 4))
    write_sidecar(path, NoiseModel(kind="non-iid", var_map=var_map), ScenePrior(mean=mean, var=0.01))
    assert (tmp_path / "pair.txt.varmap.sdvi").exists()

    noise, prior, _ = read_sidecar(path)
    np.testing.assert_allclose(noise.var_map, var_map, rtol=1e-6)
    np.testing.assert_allclose(prior.mean, mean, rtol=1e-6)
    np.testing.assert_allclose(prior.var, 0.01, rtol=1e-6)


def test_sidecar_malformed(tmp_path):
    """Test that a sidecar without a noise kind is rejected."""
    path = tmp_path / "bad.txt"
    path.write_text("noise.sigma = 0.1\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        read_sidecar(path)
