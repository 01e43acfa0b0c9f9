"""Run configuration.

Configs are UTF-8 `key = value` files with `#` comments. A `profile` key
selects the defaults the other keys override; CLI `--set key=value`
overrides are applied last. Every run writes the fully resolved config as
`resolved.cfg`, which parses back to the identical `RunConfig`.
"""

import hashlib
import logging

from pathlib import Path
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Literal

from .errors import ConfigError
from .losses import LossWeights


logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="AGAT_", env_file=".env", extra="ignore")

    output_root: str = "runs"
    log_level: str = "INFO"


class PgdConfig(BaseModel):
    epsilon: float = Field(default=8 / 255, ge=0.0)
    step: float = Field(default=2 / 255, gt=0.0)
    steps: int = Field(default=7, ge=0)
    random_start: bool = False
    seed: int = 0


class AgatConfig(BaseModel):
    """Hyperparameters of the training procedure."""

    model_config = ConfigDict(extra="forbid")

    N_epochs: int = Field(default=12, ge=1)
    N_pre: int = Field(default=5, ge=1)
    N_aug: int = Field(default=10, ge=1)
    T_aug: float = Field(default=0.30, gt=0.0, le=1.0)
    M: int = Field(default=10, ge=1)
    lambda1: float = Field(default=1.0, gt=0.0, le=1.0)
    lambda2: float = Field(default=1.0, gt=0.0, le=1.0)
    beta: float = Field(default=5.0, gt=0.0)
    eta: float = Field(default=1e-4, gt=0.0)
    mu: float = Field(default=0.1, gt=0.0)
    batch_size: int = Field(default=64, ge=1)
    seed: int = Field(default=0, ge=0)
    inner_sign: Literal["descent", "ascent"] = "descent"
    consistency: bool = True
    pgd_epsilon: float = Field(default=8 / 255, ge=0.0)
    pgd_step: float = Field(default=2 / 255, gt=0.0)
    pgd_steps: int = Field(default=7, ge=0)
    pgd_random_start: bool = False

    @model_validator(mode="after")
    def check_schedule(self):
        if self.N_pre >= self.N_epochs:
            raise ValueError(f"N_pre ({self.N_pre}) must be smaller than N_epochs ({self.N_epochs})")
        return self

    @property
    def weights(self) -> LossWeights:
        return LossWeights(lambda1=self.lambda1, lambda2=self.lambda2, beta=self.beta)

    @property
    def pgd(self) -> PgdConfig:
        return PgdConfig(
            epsilon=self.pgd_epsilon,
            step=self.pgd_step,
            steps=self.pgd_steps,
            random_start=self.pgd_random_start,
            seed=self.seed,
        )

    def augmentation_epochs(self) -> list[int]:
        return [n for n in range(self.N_pre + 1, self.N_epochs + 1) if n % self.N_aug == 0]


ARCHITECTURE_FOR_DATASET = {
    "mnist": "mnist-cnn",
    "cifar": "cifar-cnn",
    "shapes": "shapes-cnn",
}


class RunConfig(AgatConfig):
    profile: Literal["mnist", "corruption", "shapes"] = "mnist"
    mode: Literal["agat", "plain", "pgd-augment"] = "agat"
    dataset: Literal["mnist", "cifar", "shapes"] = "mnist"
    architecture: Literal["mnist-cnn", "shapes-cnn", "cifar-cnn"] = "mnist-cnn"
    surrogate: Literal["affine-stn", "blur-noise", "blur-only", "noise-only", "soft-shapes"] = "affine-stn"
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    cifar_train: str | None = None
    cifar_test: str | None = None
    max_train: int | None = Field(default=None, ge=1)
    max_test: int | None = Field(default=None, ge=1)
    split_rule: Literal["train-size-pos", "test-size-pos", "train-mat-pos", "test-mat-pos", "iid"] = "iid"
    test_split_rule: Literal["train-size-pos", "test-size-pos", "train-mat-pos", "test-mat-pos", "iid"] = "iid"
    shapes_train_n: int = Field(default=2000, ge=1)
    shapes_test_n: int = Field(default=1000, ge=1)
    output_dir: str | None = None

    @model_validator(mode="after")
    def check_combination(self):
        expected = ARCHITECTURE_FOR_DATASET[self.dataset]
        if self.architecture != expected:
            raise ValueError(f"dataset {self.dataset} needs architecture {expected}, not {self.architecture}")
        if self.surrogate == "soft-shapes" and self.dataset != "shapes":
            raise ValueError("the soft-shapes surrogate renders the shapes dataset only")
        return self


PROFILES = {
    "mnist": {},
    "corruption": {
        "N_epochs": 150,
        "N_pre": 100,
        "N_aug": 2,
        "M": 15,
        "lambda1": 0.5,
        "lambda2": 0.5,
        "beta": 0.25,
        "eta": 5e-5,
        "mu": 5e-5,
        "batch_size": 128,
        "dataset": "cifar",
        "architecture": "cifar-cnn",
        "surrogate": "blur-noise",
    },
    "shapes": {
        "N_epochs": 15,
        "N_pre": 5,
        "N_aug": 2,
        "T_aug": 0.30,
        "M": 10,
        "lambda1": 0.5,
        "lambda2": 0.5,
        "beta": 0.25,
        "eta": 1e-4,
        "mu": 0.1,
        "dataset": "shapes",
        "architecture": "shapes-cnn",
        "surrogate": "soft-shapes",
        "split_rule": "train-size-pos",
        "test_split_rule": "test-size-pos",
    },
}

ALIASES = {
    "λ1": "lambda1",
    "λ2": "lambda2",
    "β": "beta",
    "η": "eta",
    "μ": "mu",
}


def _parse_lines(text: str, source: str) -> list[tuple[str, str]]:
    pairs = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue

        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got '{raw.strip()}'")

        key, value = (part.strip() for part in line.split("=", 1))
        pairs.append((ALIASES.get(key, key), value))

    return pairs


def _parse_override(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"override '{item}' is not of the form key=value")
    key, value = (part.strip() for part in item.split("=", 1))
    return ALIASES.get(key, key), value


def _validation_message(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        where = ".".join(str(p) for p in err["loc"])
        parts.append(f"{where}: {err['msg']}" if where else err["msg"])
    return "; ".join(parts)


def build_config(pairs: list[tuple[str, str]]) -> RunConfig:
    known = set(RunConfig.model_fields)
    for key, _ in pairs:
        if key not in known:
            raise ConfigError(f"unknown key '{key}'")

    profile = "mnist"
    for key, value in pairs:
        if key == "profile":
            profile = value

    if profile not in PROFILES:
        raise ConfigError(f"unknown profile '{profile}'")

    values: dict = {**PROFILES[profile], "profile": profile}
    for key, value in pairs:
        values[key] = None if value == "" else value

    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(_validation_message(e)) from e


def parse_config_text(text: str, overrides: list[str] | None = None, source: str = "<config>") -> RunConfig:
    pairs = _parse_lines(text, source)
    pairs += [_parse_override(item) for item in overrides or []]
    return build_config(pairs)


def parse_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    """Read a `key = value` file (or nothing, for pure defaults) and apply overrides."""
    if path is None:
        return parse_config_text("", overrides)

    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e

    return parse_config_text(text, overrides, source=str(path))


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def resolved_text(config: RunConfig) -> str:
    data = config.model_dump()
    return "".join(f"{key} = {_format_value(data[key])}\n" for key in sorted(data))


def fingerprint(config: RunConfig) -> str:
    """SHA-1 of the resolved config, ignoring where the run writes its files."""
    text = resolved_text(config.model_copy(update={"output_dir": None}))
    return hashlib.sha1(text.encode("utf-8")).hexdigest()


def write_resolved(config: RunConfig, output_dir: str | Path) -> Path:
    path = Path(output_dir) / "resolved.cfg"
    path.write_text(resolved_text(config), encoding="utf-8")
    logger.info(f"Wrote {path} (fingerprint {fingerprint(config)[:12]})")
    return path
