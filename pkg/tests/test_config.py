"""
Tests for ScoreDVI configuration management.
"""

import numpy as np
import pytest
from pydantic import ValidationError

from scoredvi.config import (
    BETA_PRESETS,
    SEED_ENV_VAR,
    BackendConfig,
    ElboConfig,
    OracleSpec,
    ScoreDVIConfig,
)
from scoredvi.core.tensorio import write_tensor
from scoredvi.errors import ConfigError
from scoredvi.oracles import ExternalOracle, GaussPriorOracle, GmmPriorOracle, IdentityOracle


def _write(tmp_path, text, name="run.conf"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_elbo_config_defaults():
    """Test the documented defaults."""
    config = ElboConfig()
    assert (config.K, config.M, config.T) == (3, 5, 400)
    assert config.lr == 1e-3
    assert (config.alpha, config.beta) == (1.0, 0.02)
    assert (config.l1, config.l2, config.gamma) == (10.0, 25.0, 2.0)
    assert config.sigma2_grad == "chain"
    np.testing.assert_array_equal(config.d_vector, np.ones(3))


def test_elbo_config_validation():
    """Test ElboConfig validation."""
    with pytest.raises(ValidationError):
        ElboConfig(K=0)
    with pytest.raises(ValidationError):
        ElboConfig(lr=0.0)
    with pytest.raises(ValidationError):
        ElboConfig(gamma=0.5)
    with pytest.raises(ValidationError):
        ElboConfig(sigma2_grad="exact")
    with pytest.raises(ValidationError):
        ElboConfig(l1=30.0, l2=25.0)
    with pytest.raises(ValidationError):
        ElboConfig(K=2, d=[1.0])
    with pytest.raises(ValidationError):
        ElboConfig(K=2, d=[1.0, -1.0])
    with pytest.raises(ValidationError):
        ElboConfig(delta=-1.0)


@pytest.mark.parametrize("name", sorted(BETA_PRESETS))
def test_beta_presets(name):
    """Test that named noise presets resolve to rates."""
    assert ElboConfig(beta=name).beta == BETA_PRESETS[name]
    assert ElboConfig(beta=name.upper()).beta == BETA_PRESETS[name]


def test_oracle_spec_parse():
    """Test the config-file form of oracle specifications."""
    spec = OracleSpec.parse("gauss mean=0.5 var=0.01")
    assert spec.kind == "gauss"
    assert (spec.mean, spec.var) == (0.5, 0.01)

    spec = OracleSpec.parse("gmm weights=0.5,0.5 means=0.2,0.8 variances=0.01,0.02")
    assert spec.means == [0.2, 0.8]

    spec = OracleSpec.parse('external command="denoise {in} {out} {nv}" timeout=30')
    assert spec.command == "denoise {in} {out} {nv}"
    assert spec.timeout == 30.0

    for bad in ("", "blur", "gauss mean=0.5", "gauss 0.5", "external", 'external command="oops'):
        with pytest.raises(ConfigError):
            OracleSpec.parse(bad)


def test_oracle_spec_build(tmp_path):
    """Test that specs build the matching oracle classes."""
    assert isinstance(OracleSpec().build(), IdentityOracle)
    assert isinstance(OracleSpec.parse("gauss mean=0.5 var=0.01").build(), GaussPriorOracle)
    gmm = OracleSpec.parse("gmm weights=0.5,0.5 means=0.2,0.8 variances=0.01,0.02").build()
    assert isinstance(gmm, GmmPriorOracle)
    assert gmm.components == 2

    mean_path = tmp_path / "mean.sdvi"
    write_tensor(mean_path, np.full((1, 2, 2), 0.3))
    oracle = OracleSpec(kind="gauss", mean_file=str(mean_path), var=0.01).build()
    denoised = oracle.denoise(np.full((1, 2, 2), 0.3), np.full((1, 2, 2), 0.01))
    np.testing.assert_allclose(denoised, 0.3)

    external = OracleSpec.parse(
        'external command="denoise {in} {out} {nv}" sigma_min=0.01 sigma_max=0.5'
    ).build()
    assert isinstance(external, ExternalOracle)
    assert external.validity_range == (0.01, 0.5)


def test_backend_config_validation():
    """Test BackendConfig validation."""
    assert BackendConfig().kind == "direct"
    with pytest.raises(ValidationError):
        BackendConfig(kind="transformer")
    with pytest.raises(ValidationError):
        BackendConfig(channels=0)


def test_load_config_file(tmp_path, monkeypatch):
    """Test loading a key = value file with comments and per-component oracles."""
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)
    path = _write(
        tmp_path,
        "# two-component run\n"
        "K = 2\n"
        "T = 50   # short\n"
        "beta = low\n"
        "d = 1, 2\n"
        "backend = conv\n"
        "backend.channels = 8\n"
        "oracle.1 = gauss mean=0.5 var=0.01\n"
        'oracle.2 = external command="den {in} {out} {nv} # not a comment"\n'
        "log_level = debug\n",
    )
    config = ScoreDVIConfig.load(str(path), required=["K"])
    assert config.elbo.K == 2
    assert config.elbo.T == 50
    assert config.elbo.beta == BETA_PRESETS["low"]
    assert config.elbo.d == [1.0, 2.0]
    assert config.backend.kind == "conv"
    assert config.backend.channels == 8
    assert config.logging.level == "DEBUG"
    assert [spec.kind for spec in config.oracles] == ["gauss", "external"]
    assert config.oracles[1].command.endswith("# not a comment")


def test_load_config_errors(tmp_path, monkeypatch):
    """Test that missing keys, unknown keys and bad values raise ConfigError."""
    monkeypatch.chdir(tmp_path)

    with pytest.raises(ConfigError) as exc_info:
        ScoreDVIConfig.load(str(_write(tmp_path, "T = 10\n")), required=["K"])
    assert exc_info.value.key == "K"

    with pytest.raises(ConfigError) as exc_info:
        ScoreDVIConfig.load(str(_write(tmp_path, "K = 2\nwidth = 3\n")))
    assert exc_info.value.key == "width"

    with pytest.raises(ConfigError):
        ScoreDVIConfig.load(str(_write(tmp_path, "K = 2\nK = 3\n")))

    with pytest.raises(ConfigError):
        ScoreDVIConfig.load(str(_write(tmp_path, "K = two\n")))

    with pytest.raises(ConfigError):
        ScoreDVIConfig.load(str(_write(tmp_path, "K = 2\noracle.1 = identity\n")))

    with pytest.raises(ConfigError):
        ScoreDVIConfig.load(str(tmp_path / "missing.conf"))


def test_seed_from_environment(tmp_path, monkeypatch):
    """Test that SCOREDVI_SEED overrides the file and .env files are read."""
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)
    path = _write(tmp_path, "K = 1\nseed = 3\n")
    assert ScoreDVIConfig.load(str(path)).elbo.seed == 3

    monkeypatch.setenv(SEED_ENV_VAR, "11")
    assert ScoreDVIConfig.load(str(path)).elbo.seed == 11

    monkeypatch.setenv(SEED_ENV_VAR, "eleven")
    with pytest.raises(ConfigError):
        ScoreDVIConfig.load(str(path))

    monkeypatch.delenv(SEED_ENV_VAR)
    env_file = tmp_path / "custom.env"
    env_file.write_text(f"{SEED_ENV_VAR}=21\n", encoding="utf-8")
    assert ScoreDVIConfig.load(str(path), env_file=str(env_file)).elbo.seed == 21


def test_with_overrides():
    """Test command-line style overrides."""
    config = ScoreDVIConfig()
    updated = config.with_overrides(K=1, T=None, oracle="gauss mean=0.5 var=0.01", backend="conv")
    assert updated.elbo.K == 1
    assert updated.elbo.T == config.elbo.T
    assert updated.oracles[0].kind == "gauss"
    assert updated.backend.kind == "conv"
    assert config.elbo.K == 3
    assert config.with_overrides(T=None) is config

    with pytest.raises(ConfigError):
        config.with_overrides(M=0)


def test_oracle_count_must_match_k():
    """Test the 1-or-K oracle rule."""
    specs = [OracleSpec(), OracleSpec()]
    with pytest.raises(ValidationError):
        ScoreDVIConfig(elbo=ElboConfig(K=3), oracles=specs)
    config = ScoreDVIConfig(elbo=ElboConfig(K=2), oracles=specs)
    with pytest.raises(ConfigError) as exc_info:
        config.with_overrides(K=3)
    assert exc_info.value.key == "K"


def test_build_oracles_broadcasts():
    """Test that a single spec is shared by every component."""
    config = ScoreDVIConfig(elbo=ElboConfig(K=3))
    oracles = config.build_oracles()
    assert len(oracles) == 3
    assert all(isinstance(o, IdentityOracle) for o in oracles)


def test_validate_configuration():
    """Test configuration warnings."""
    config = ScoreDVIConfig()
    issues = config.validate_configuration()
    assert isinstance(issues, list)
    assert any("Identity oracle" in issue for issue in issues)

    quick = ScoreDVIConfig(elbo=ElboConfig(T=10, M=1))
    issues = quick.validate_configuration()
    assert any("T=10" in issue for issue in issues)
    assert any("M=1" in issue for issue in issues)


def test_config_to_dict():
    """Test configuration serialization."""
    config_dict = ScoreDVIConfig().to_dict()
    assert isinstance(config_dict, dict)
    assert config_dict["elbo"]["K"] == 3
    assert config_dict["backend"]["kind"] == "direct"
