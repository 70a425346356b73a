"""Run configuration: dataclass sections, YAML loading and flag overrides.

Precedence is ``command-line flags > config file > built-in defaults``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field, fields, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

import yaml

from .constants import DEFAULT_HINGE_FLOOR, DEFAULT_MIN_DROP_RATIO, IMAGE_CHANNELS, MIN_PROFILE_REPEATS
from .costmodel import FactorSource
from .distill import DistillConfig
from .errors import ConfigurationError, DimensionError
from .netgraph import build_patchgan, layer_sizes
from .penalize import PenalizationConfig
from .trainer import TrainConfig

logger = logging.getLogger(__name__)

_MANUAL_KEEP = re.compile(r"^(?:layer)?(\d+)=(\d+)$")


@dataclass
class ModelConfig:
    base_channels: int = 16
    depth: int = 4
    cap: int = 128
    input_size: int = 64
    instance_norm: bool = False
    discriminator_channels: int = 16


@dataclass
class DataConfig:
    n_train: int = 64
    n_holdout: int = 16


@dataclass
class HingeConfig:
    min_drop_ratio: float = DEFAULT_MIN_DROP_RATIO
    floor: float = DEFAULT_HINGE_FLOOR
    manual_keep: dict[int, int] = field(default_factory=dict)


@dataclass
class ProfileConfig:
    source: FactorSource = FactorSource.MAC
    repeats: int = 5
    warmup: int = 1


@dataclass
class PathsConfig:
    workdir: str = "work"


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    penal: PenalizationConfig = field(default_factory=PenalizationConfig)
    hinge: HingeConfig = field(default_factory=HingeConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    profile: ProfileConfig = field(default_factory=ProfileConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def sync(self) -> "RunConfig":
        """Propagate the run seed and penalization section into the stage configs."""
        self.train.seed = self.seed
        self.train.penal = self.penal
        self.distill.seed = self.seed
        return self

    @property
    def workdir(self) -> Path:
        return Path(self.paths.workdir)


# Keys that are derived from other sections rather than read from a file.
_DERIVED = {"train": {"seed", "penal"}, "distill": {"seed"}}


def default_run_config() -> RunConfig:
    """Return the built-in defaults."""
    return RunConfig().sync()


# ---------------------------------------------------------------- coercion
def _coerce_float(key: str, value: Any) -> float:
    # YAML 1.1 reads exponent-only floats such as 1e-4 as strings.
    if isinstance(value, str):
        try:
            number = float(value)
        except ValueError:
            number = None
    elif isinstance(value, (int, float)) and not isinstance(value, bool):
        number = float(value)
    else:
        number = None
    if number is None or not math.isfinite(number):
        raise ConfigurationError(f"{key}: expected a number, got {value!r}", {"key": key})
    return number


def _coerce(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, Enum):
        try:
            return type(default)(value)
        except ValueError as exc:
            choices = ", ".join(member.value for member in type(default))
            raise ConfigurationError(f"{key}: '{value}' is not one of {choices}", {"key": key}) from exc
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{key}: expected true/false, got {value!r}", {"key": key})
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{key}: expected an integer, got {value!r}", {"key": key})
        return value
    if isinstance(default, float) or default is None:
        if value is None and default is None:
            return None
        return _coerce_float(key, value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigurationError(f"{key}: expected a string, got {value!r}", {"key": key})
        return value
    if isinstance(default, dict):
        if not isinstance(value, Mapping):
            raise ConfigurationError(f"{key}: expected a mapping, got {value!r}", {"key": key})
        return parse_manual_keep(f"{k}={v}" for k, v in value.items())
    raise ConfigurationError(f"{key}: unsupported value {value!r}", {"key": key})


def _apply_section(section: Any, name: str, values: Any) -> None:
    if values is None:
        return
    if not isinstance(values, Mapping):
        raise ConfigurationError(f"section '{name}' must be a mapping", {"key": name})
    allowed = {f.name for f in fields(section)} - _DERIVED.get(name, set())
    for key, value in values.items():
        dotted = f"{name}.{key}"
        if key not in allowed:
            raise ConfigurationError(f"unknown configuration key '{dotted}'", {"key": dotted})
        setattr(section, key, _coerce(dotted, value, getattr(section, key)))


def config_from_mapping(data: Mapping[str, Any]) -> RunConfig:
    config = default_run_config()
    known = {f.name for f in fields(config)}
    for name, values in data.items():
        if name not in known:
            raise ConfigurationError(f"unknown configuration section '{name}'", {"key": name})
        if name == "seed":
            config.seed = _coerce("seed", values, 0)
        else:
            _apply_section(getattr(config, name), name, values)
    return config.sync()


def load_config(path: Optional[str]) -> RunConfig:
    """Read a YAML config file; ``None`` yields the defaults."""
    if path is None:
        return default_run_config()
    source = Path(path)
    if not source.is_file():
        raise ConfigurationError(f"config file not found: {source}", {"path": str(source)})
    try:
        with open(source, encoding="utf-8") as stream:
            data = yaml.safe_load(stream)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse {source}: {exc}", {"path": str(source)}) from exc
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigurationError(f"{source}: top level must be a mapping", {"path": str(source)})
    logger.debug("loaded configuration from %s", source)
    return config_from_mapping(data)


def parse_manual_keep(items: Iterable[str]) -> dict[int, int]:
    """``["layer3=50", "5=8"]`` -> ``{3: 50, 5: 8}``."""
    result: dict[int, int] = {}
    for item in items:
        match = _MANUAL_KEEP.match(str(item).strip())
        if match is None:
            raise ConfigurationError(
                f"manual keep '{item}' must look like layer<ID>=<KEEP>", {"key": "hinge.manual_keep"}
            )
        result[int(match.group(1))] = int(match.group(2))
    return result


# -------------------------------------------------------------- validation
def _check_discriminator_fits(model: ModelConfig) -> None:
    discriminator = build_patchgan(2 * IMAGE_CHANNELS, model.discriminator_channels)
    try:
        layer_sizes(discriminator, model.input_size)
    except (ConfigurationError, DimensionError) as exc:
        raise ConfigurationError(
            f"model.input_size={model.input_size} is too small for the PatchGAN discriminator ({exc})",
            {"key": "model.input_size"},
        ) from exc


def validate_config(config: RunConfig) -> None:
    """Reject impossible values before any compute starts."""
    model = config.model
    if min(model.base_channels, model.depth, model.cap, model.input_size, model.discriminator_channels) < 1:
        raise ConfigurationError("model sizes must be positive", {"key": "model"})
    if model.base_channels > model.cap:
        raise ConfigurationError("model.base_channels exceeds model.cap", {"key": "model.cap"})
    if model.input_size % 2**model.depth:
        raise ConfigurationError(
            f"model.input_size={model.input_size} is not divisible by 2^{model.depth}",
            {"key": "model.input_size"},
        )
    _check_discriminator_fits(model)
    if config.data.n_train < 1 or config.data.n_holdout < 0:
        raise ConfigurationError("data.n_train must be >= 1 and data.n_holdout >= 0", {"key": "data"})
    if config.hinge.min_drop_ratio <= 1.0:
        raise ConfigurationError(
            f"hinge.min_drop_ratio must exceed 1, got {config.hinge.min_drop_ratio}",
            {"key": "hinge.min_drop_ratio"},
        )
    if config.hinge.floor < 0:
        raise ConfigurationError("hinge.floor must be non-negative", {"key": "hinge.floor"})
    if any(keep < 1 for keep in config.hinge.manual_keep.values()):
        raise ConfigurationError("manual keep counts must be >= 1", {"key": "hinge.manual_keep"})
    if config.profile.repeats < MIN_PROFILE_REPEATS:
        raise ConfigurationError(
            f"profile.repeats must be >= {MIN_PROFILE_REPEATS}, got {config.profile.repeats}",
            {"key": "profile.repeats"},
        )
    if config.profile.warmup < 1:
        raise ConfigurationError("profile.warmup must be >= 1", {"key": "profile.warmup"})
    config.sync()
    config.train.validate()
    config.distill.validate()


def _plain(value: Any) -> Any:
    if is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    return value


def config_digest(config: RunConfig) -> str:
    """SHA-256 of the canonical JSON form, workdir excluded."""
    data = _plain(config)
    data.pop("paths", None)
    data["train"].pop("penal", None)
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
