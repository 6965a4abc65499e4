"""Training/evaluation configuration and its YAML file format."""

import dataclasses
import typing
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

import yaml

SCHEMA_VERSION = 1


class ConfigError(Exception):
    """Invalid or incomplete configuration."""


@dataclass
class TrainConfig:
    # optimisation
    lr0: float = 1e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0
    batch_size: int = 32
    epochs: int = 160
    lr_decay_period: int = 80
    lr_decay_factor: float = 10.0
    grad_clip: Optional[float] = None
    seed: int = 0
    # model
    input_size: int = 352
    width: int = 64
    use_isc: bool = True
    use_csc: bool = True
    use_rrd: bool = True
    backbone_weights: Optional[str] = None
    # data
    data_root: Optional[str] = None
    train_split: str = "train"
    test_split: str = "test"
    flip: bool = False
    # io
    checkpoint_dir: str = "checkpoints"
    checkpoint_every: int = 1
    checkpoint: Optional[str] = None
    plot: bool = True

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.input_size % 32:
            raise ConfigError(f"input_size {self.input_size} is not divisible by 32")
        if self.lr_decay_period < 1 or self.lr_decay_factor <= 0:
            raise ConfigError("lr_decay_period must be >= 1 and lr_decay_factor > 0")
        self.betas = tuple(self.betas)
        if len(self.betas) != 2:
            raise ConfigError("betas needs exactly two values")

    def to_dict(self) -> Dict[str, Any]:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


_HINTS = typing.get_type_hints(TrainConfig)


def _coerce(key: str, value: Any) -> Any:
    hint = _HINTS[key]
    optional = typing.get_origin(hint) is Union and type(None) in typing.get_args(hint)
    if optional:
        if value is None or (isinstance(value, str) and value.lower() in ("none", "null", "")):
            return None
        hint = next(a for a in typing.get_args(hint) if a is not type(None))
    if isinstance(value, str) and hint is not str:
        # PyYAML reads "1e-4" as a string, so floats go through float() directly
        try:
            value = float(value) if hint is float else yaml.safe_load(value)
        except (ValueError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse value for {key!r}: {value!r}") from exc
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key!r} expects true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key!r} expects an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key!r} expects a number, got {value!r}")
        return float(value)
    if hint is str:
        return str(value)
    if typing.get_origin(hint) is tuple:
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, (int, float)) for v in value):
            raise ConfigError(f"{key!r} expects a list of numbers, got {value!r}")
        return tuple(float(v) for v in value)
    raise ConfigError(f"unsupported type for {key!r}")


def parse_overrides(pairs: Iterable[str]) -> Dict[str, str]:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        out[key.strip()] = value.strip()
    return out


def build_config(values: Dict[str, Any]) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return TrainConfig(**{k: _coerce(k, v) for k, v in values.items()})


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None) -> TrainConfig:
    """Read a YAML config (if given) and apply overrides, which win over file values."""
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            loaded = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path} must contain a mapping")
        version = loaded.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"{path}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
        values.update(loaded)
    values.update(overrides or {})
    return build_config(values)


def dump_config(config: TrainConfig, path: Union[str, Path]) -> None:
    data = {"schema_version": SCHEMA_VERSION, **config.to_dict()}
    Path(path).write_text(yaml.safe_dump(data, sort_keys=False))
