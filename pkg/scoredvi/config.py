"""
ScoreDVI Configuration Management

Handles loading and validation of run settings: loss and optimizer
hyperparameters, denoiser oracle specifications, the parameter backend and
logging. Settings come from a plain-text ``key = value`` file, an optional
``.env`` file, the ``SCOREDVI_SEED`` environment variable and command-line
overrides, in increasing order of precedence.
"""

import os
import shlex
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .core.image import load_image
from .core.tensorio import read_tensor
from .errors import ConfigError
from .oracles import (
    DenoiserOracle,
    ExternalOracle,
    GaussPriorOracle,
    GmmPriorOracle,
    IdentityOracle,
)

BETA_PRESETS: Dict[str, float] = {"noisy": 0.02, "medium": 0.01, "low": 0.005}

SEED_ENV_VAR = "SCOREDVI_SEED"


class ElboConfig(BaseModel):
    """Loss, sampling and optimizer settings for one denoising run."""

    K: int = Field(3, description="Number of mixture components")
    M: int = Field(5, description="Monte Carlo samples per component and iteration")
    T: int = Field(400, description="Optimization iterations")
    lr: float = Field(1e-3, description="Adam learning rate")
    alpha: float = Field(1.0, description="Gamma hyperprior shape")
    beta: float = Field(0.02, description="Gamma hyperprior rate, or a preset name")
    d: Optional[List[float]] = Field(
        None, description="Dirichlet hyperprior concentrations (defaults to all ones)"
    )
    l1: float = Field(10.0, description="Lower noise threshold on the 0-255 scale")
    l2: float = Field(25.0, description="Upper noise threshold on the 0-255 scale")
    gamma: float = Field(2.0, description="Prior-assignment coefficient")
    sigma2_grad: str = Field(
        "chain", description="Variance score gradient mode: chain or printed"
    )
    seed: int = Field(0, description="Seed of the Monte Carlo random stream")
    delta: Optional[float] = Field(
        None, description="Fixed noise level on the 0-255 scale; skips estimation"
    )
    workers: int = Field(1, description="Threads used to dispatch oracle calls")
    log_every: int = Field(50, description="Iterations between INFO loss reports")
    checkpoint_every: int = Field(0, description="Iterations between checkpoints (0=off)")

    @field_validator("K", "M", "T", "workers")
    @classmethod
    def validate_positive_count(cls, v):
        if v < 1:
            raise ValueError("Counts must be at least 1")
        return v

    @field_validator("lr", "alpha")
    @classmethod
    def validate_positive(cls, v):
        if v <= 0:
            raise ValueError("Value must be strictly positive")
        return v

    @field_validator("beta", mode="before")
    @classmethod
    def validate_beta(cls, v):
        if isinstance(v, str) and v.strip().lower() in BETA_PRESETS:
            return BETA_PRESETS[v.strip().lower()]
        if float(v) <= 0:
            raise ValueError(
                f"beta must be positive or one of {sorted(BETA_PRESETS)}"
            )
        return v

    @field_validator("gamma")
    @classmethod
    def validate_gamma(cls, v):
        if v < 1:
            raise ValueError("gamma must be at least 1")
        return v

    @field_validator("sigma2_grad")
    @classmethod
    def validate_sigma2_grad(cls, v):
        valid_modes = ["chain", "printed"]
        if v not in valid_modes:
            raise ValueError(f"sigma2_grad must be one of {valid_modes}")
        return v

    @field_validator("delta")
    @classmethod
    def validate_delta(cls, v):
        if v is not None and v < 0:
            raise ValueError("delta must be nonnegative")
        return v

    @field_validator("log_every", "checkpoint_every")
    @classmethod
    def validate_interval(cls, v):
        if v < 0:
            raise ValueError("Intervals must be nonnegative")
        return v

    @model_validator(mode="after")
    def validate_consistency(self) -> "ElboConfig":
        if not self.l1 < self.l2:
            raise ValueError("l1 must be smaller than l2")
        if self.d is not None:
            if len(self.d) != self.K:
                raise ValueError(f"d needs {self.K} entries, got {len(self.d)}")
            if any(v <= 0 for v in self.d):
                raise ValueError("d entries must be positive")
        return self

    @property
    def d_vector(self) -> np.ndarray:
        if self.d is None:
            return np.ones(self.K)
        return np.asarray(self.d, dtype=np.float64)


class OracleSpec(BaseModel):
    """
    Description of one denoiser oracle.

    Written in a config file as the kind followed by ``key=value`` tokens,
    for example ``gauss mean=0.5 var=0.01`` or
    ``external command="my-denoiser {in} {out} {nv}" timeout=60``.
    """

    kind: str = Field("identity", description="gauss, gmm, external or identity")
    mean: Optional[float] = Field(None, description="Gaussian prior mean")
    var: Optional[float] = Field(None, description="Gaussian prior variance")
    mean_file: Optional[str] = Field(
        None, description="SDVI1 tensor holding a per-pixel Gaussian prior mean"
    )
    weights: Optional[List[float]] = Field(None, description="GMM weights")
    means: Optional[List[float]] = Field(None, description="GMM means")
    variances: Optional[List[float]] = Field(None, description="GMM variances")
    fit: Optional[str] = Field(
        None, description="Image whose pixel histogram the GMM is fitted to"
    )
    components: int = Field(3, description="Components of a fitted GMM")
    command: Optional[str] = Field(None, description="External command template")
    timeout: float = Field(120.0, description="External command timeout in seconds")
    retries: int = Field(1, description="External command attempts on timeout")
    sigma_min: Optional[float] = Field(None, description="Lower validity bound on sigma")
    sigma_max: Optional[float] = Field(None, description="Upper validity bound on sigma")

    @field_validator("kind")
    @classmethod
    def validate_kind(cls, v):
        valid_kinds = ["gauss", "gmm", "external", "identity"]
        if v not in valid_kinds:
            raise ValueError(f"Oracle kind must be one of {valid_kinds}")
        return v

    @field_validator("weights", "means", "variances", mode="before")
    @classmethod
    def split_list(cls, v):
        if isinstance(v, str):
            return [float(item) for item in v.split(",") if item.strip()]
        return v

    @model_validator(mode="after")
    def validate_parameters(self) -> "OracleSpec":
        if self.kind == "gauss":
            if self.mean is None and self.mean_file is None:
                raise ValueError("gauss oracle needs mean or mean_file")
            if self.var is None or self.var <= 0:
                raise ValueError("gauss oracle needs a positive var")
        elif self.kind == "gmm" and self.fit is None:
            if not (self.weights and self.means and self.variances):
                raise ValueError("gmm oracle needs weights, means and variances, or fit")
        elif self.kind == "external":
            if not self.command:
                raise ValueError("external oracle needs a command")
            if self.retries < 1 or self.timeout <= 0:
                raise ValueError("external oracle needs retries >= 1 and timeout > 0")
        return self

    @classmethod
    def parse(cls, text: str) -> "OracleSpec":
        """
        Parse the config-file form of an oracle.

        Raises:
            ConfigError: If the text cannot be tokenized or validated
        """
        try:
            tokens = shlex.split(text)
        except ValueError as e:
            raise ConfigError(f"Cannot parse oracle {text!r}: {e}", key="oracle") from e
        if not tokens:
            raise ConfigError("Empty oracle specification", key="oracle")
        values: Dict[str, Any] = {"kind": tokens[0]}
        for token in tokens[1:]:
            name, sep, value = token.partition("=")
            if not sep:
                raise ConfigError(f"Oracle option {token!r} is not key=value", key="oracle")
            values[name] = value
        try:
            return cls(**values)
        except ValidationError as e:
            raise ConfigError(f"Invalid oracle {text!r}: {e}", key="oracle") from e

    def build(self, rng_seed: int = 0) -> DenoiserOracle:
        """Instantiate the oracle this spec describes."""
        if self.kind == "identity":
            return IdentityOracle()
        if self.kind == "gauss":
            mean = read_tensor(self.mean_file) if self.mean_file else self.mean
            return GaussPriorOracle(mean, self.var)
        if self.kind == "gmm":
            if self.fit is not None:
                return GmmPriorOracle.fit(
                    load_image(self.fit).ravel(),
                    components=self.components,
                    rng=np.random.default_rng(rng_seed),
                )
            return GmmPriorOracle(self.weights, self.means, self.variances)
        validity = None
        if self.sigma_min is not None or self.sigma_max is not None:
            validity = (
                self.sigma_min if self.sigma_min is not None else 1.0 / 255.0,
                self.sigma_max if self.sigma_max is not None else 100.0 / 255.0,
            )
        kwargs: Dict[str, Any] = {"timeout": self.timeout, "retries": self.retries}
        if validity is not None:
            kwargs["validity_range"] = validity
        return ExternalOracle(self.command, **kwargs)


class BackendConfig(BaseModel):
    """Parameter backend configuration."""

    kind: str = Field("direct", description="Backend kind: direct or conv")
    channels: int = Field(32, description="Feature channels of the conv networks")
    init_seed: int = Field(0, description="Seed of the conv weight initialization")

    @field_validator("kind")
    @classmethod
    def validate_kind(cls, v):
        valid_kinds = ["direct", "conv"]
        if v not in valid_kinds:
            raise ValueError(f"Backend kind must be one of {valid_kinds}")
        return v

    @field_validator("channels")
    @classmethod
    def validate_channels(cls, v):
        if v < 1:
            raise ValueError("Backend channels must be at least 1")
        return v


class LoggingConfig(BaseModel):
    """Logging configuration."""

    level: str = Field("INFO", description="Logging level")
    log_file: Optional[str] = Field(None, description="Log file path")

    @field_validator("level")
    @classmethod
    def validate_log_level(cls, v):
        valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in valid_levels:
            raise ValueError(f"Log level must be one of {valid_levels}")
        return v.upper()


# config-file key -> (section, field)
_ELBO_KEYS = set(ElboConfig.model_fields)
_BACKEND_KEYS = {"backend": "kind", "backend.channels": "channels", "backend.init_seed": "init_seed"}
_LOGGING_KEYS = {"log_level": "level", "log_file": "log_file"}
_PATH_KEYS = {"input", "output", "log", "checkpoint"}


class ScoreDVIConfig(BaseModel):
    """
    Main ScoreDVI configuration class that combines all configuration sections.
    """

    elbo: ElboConfig = Field(default_factory=ElboConfig)
    oracles: List[OracleSpec] = Field(
        default_factory=lambda: [OracleSpec()],
        description="One oracle broadcast to every component, or one per component",
    )
    backend: BackendConfig = Field(default_factory=BackendConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)

    input: Optional[str] = Field(None, description="Noisy input image")
    output: Optional[str] = Field(None, description="Denoised output image")
    log: Optional[str] = Field(None, description="Per-iteration loss CSV")
    checkpoint: Optional[str] = Field(None, description="Weight checkpoint path")

    @model_validator(mode="after")
    def validate_oracle_count(self) -> "ScoreDVIConfig":
        if len(self.oracles) not in (1, self.elbo.K):
            raise ValueError(
                f"Expected 1 or K={self.elbo.K} oracles, got {len(self.oracles)}"
            )
        return self

    @staticmethod
    def parse_file(path: Union[str, Path]) -> Dict[str, str]:
        """
        Read a UTF-8 ``key = value`` file; ``#`` starts a comment.

        Raises:
            ConfigError: On unreadable files, malformed lines or duplicate keys
        """
        try:
            text = Path(path).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as e:
            raise ConfigError(f"Cannot read config file {path}: {e}") from e

        entries: Dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip() if not _quoted_hash(raw) else raw.strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            if key in entries:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key}", key=key)
            entries[key] = value
        return entries

    @classmethod
    def from_entries(
        cls, entries: Dict[str, str], required: Iterable[str] = ()
    ) -> "ScoreDVIConfig":
        """
        Build a configuration from flat config-file entries.

        Raises:
            ConfigError: On missing required keys, unknown keys or invalid values
        """
        for key in required:
            if key not in entries:
                raise ConfigError(f"Missing required config key: {key}", key=key)

        elbo: Dict[str, Any] = {}
        backend: Dict[str, Any] = {}
        logging_values: Dict[str, Any] = {}
        paths: Dict[str, Any] = {}
        broadcast: Optional[OracleSpec] = None
        per_component: Dict[int, OracleSpec] = {}

        for key, value in entries.items():
            if key in _ELBO_KEYS:
                elbo[key] = _split_list(value) if key == "d" else value
            elif key in _BACKEND_KEYS:
                backend[_BACKEND_KEYS[key]] = value
            elif key in _LOGGING_KEYS:
                logging_values[_LOGGING_KEYS[key]] = value
            elif key in _PATH_KEYS:
                paths[key] = value
            elif key == "oracle":
                broadcast = OracleSpec.parse(value)
            elif key.startswith("oracle."):
                index = key.split(".", 1)[1]
                if not index.isdigit() or int(index) < 1:
                    raise ConfigError(f"Bad oracle index in key {key}", key=key)
                per_component[int(index)] = OracleSpec.parse(value)
            else:
                raise ConfigError(f"Unknown config key: {key}", key=key)

        if broadcast is not None and per_component:
            raise ConfigError("Use either 'oracle' or 'oracle.N' keys, not both", key="oracle")
        if per_component:
            count = int(elbo.get("K", ElboConfig.model_fields["K"].default))
            missing = [k for k in range(1, count + 1) if k not in per_component]
            if missing or len(per_component) != count:
                key = f"oracle.{missing[0]}" if missing else "oracle"
                raise ConfigError(f"Need oracle.1 .. oracle.{count}", key=key)
            oracles = [per_component[k] for k in range(1, count + 1)]
        else:
            oracles = [broadcast if broadcast is not None else OracleSpec()]

        try:
            return cls(
                elbo=ElboConfig(**elbo),
                oracles=oracles,
                backend=BackendConfig(**backend),
                logging=LoggingConfig(**logging_values),
                **paths,
            )
        except ValidationError as e:
            raise ConfigError(f"Invalid configuration: {e}", key=_first_loc(e)) from e

    @classmethod
    def load(
        cls,
        config_path: Optional[str] = None,
        required: Iterable[str] = (),
        env_file: Optional[str] = None,
    ) -> "ScoreDVIConfig":
        """
        Load configuration from an optional config file and the environment.

        Args:
            config_path: Optional path to a ``key = value`` config file
            required: Keys that must be present in the file
            env_file: Optional .env file; defaults to ``.env`` in the working directory

        Returns:
            ScoreDVIConfig instance
        """
        entries = cls.parse_file(config_path) if config_path else {}
        missing = [key for key in required if key not in entries]
        if missing:
            raise ConfigError(f"Missing required config key: {missing[0]}", key=missing[0])

        # Load environment variables
        env_path = Path(env_file) if env_file else Path(".env")
        if env_path.exists():
            load_dotenv(env_path)

        config = cls.from_entries(entries, required=required)
        seed = os.getenv(SEED_ENV_VAR)
        if seed is not None:
            try:
                config = config.with_overrides(seed=int(seed))
            except ValueError as e:
                raise ConfigError(f"{SEED_ENV_VAR} must be an integer", key="seed") from e
        return config

    def with_overrides(self, **overrides: Any) -> "ScoreDVIConfig":
        """
        Return a copy with ElboConfig fields (and ``backend``/``oracle``) replaced.

        ``None`` values are ignored so unset command-line flags can be passed through.
        """
        overrides = {k: v for k, v in overrides.items() if v is not None}
        if not overrides:
            return self
        data = self.model_dump()
        oracle = overrides.pop("oracle", None)
        backend_kind = overrides.pop("backend", None)
        for key in list(overrides):
            if key in _PATH_KEYS:
                data[key] = overrides.pop(key)
        data["elbo"].update(overrides)
        if backend_kind is not None:
            data["backend"]["kind"] = backend_kind
        if oracle is not None:
            spec = oracle if isinstance(oracle, OracleSpec) else OracleSpec.parse(oracle)
            data["oracles"] = [spec.model_dump()]
        elif len(data["oracles"]) not in (1, data["elbo"]["K"]):
            raise ConfigError(
                f"Config lists {len(data['oracles'])} oracles but K={data['elbo']['K']}",
                key="K",
            )
        try:
            return ScoreDVIConfig(**data)
        except ValidationError as e:
            raise ConfigError(f"Invalid override: {e}", key=_first_loc(e)) from e

    def build_oracles(self) -> List[DenoiserOracle]:
        """Instantiate one oracle per component, broadcasting a single spec."""
        built = [spec.build(rng_seed=self.elbo.seed) for spec in self.oracles]
        if len(built) == 1:
            return built * self.elbo.K
        return built

    def to_dict(self) -> Dict[str, Any]:
        """Convert configuration to dictionary."""
        return self.model_dump()

    def validate_configuration(self) -> List[str]:
        """
        Validate the current configuration and return any issues.

        Returns:
            List of validation warning messages
        """
        issues = []

        if self.elbo.T < 100:
            issues.append(f"T={self.elbo.T} iterations is unlikely to converge")

        if self.elbo.lr > 0.1:
            issues.append(f"Learning rate {self.elbo.lr} is unusually large")

        if self.elbo.M < 2:
            issues.append("M=1 gives very noisy score gradients")

        kinds = {spec.kind for spec in self.oracles}
        if "external" in kinds and self.elbo.workers > 1:
            issues.append("External oracles are not concurrent-safe; calls will be serialized")

        if kinds == {"identity"}:
            issues.append("Identity oracle supplies no prior information")

        for spec in self.oracles:
            if spec.mean_file and not Path(spec.mean_file).exists():
                issues.append(f"Prior mean file not found: {spec.mean_file}")
            if spec.fit and not Path(spec.fit).exists():
                issues.append(f"GMM fit image not found: {spec.fit}")

        return issues


def _split_list(value: str) -> List[float]:
    try:
        return [float(item) for item in value.split(",") if item.strip()]
    except ValueError as e:
        raise ConfigError(f"Expected a comma-separated list of numbers, got {value!r}", key="d") from e


def _quoted_hash(line: str) -> bool:
    """True if the first '#' of ``line`` sits inside quotes."""
    position = line.find("#")
    if position < 0:
        return False
    prefix = line[:position]
    return prefix.count('"') % 2 == 1 or prefix.count("'") % 2 == 1


def _first_loc(error: ValidationError) -> Optional[str]:
    errors = error.errors()
    if not errors or not errors[0].get("loc"):
        return None
    return str(errors[0]["loc"][-1])

