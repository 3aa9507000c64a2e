"""Run configuration: a flat YAML key/value file mapped onto TrainConfig.

Unknown keys are rejected outright; silent typos in experiment configs are
how irreproducible results happen.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass

import yaml

from .errors import ConfigError
from .network import NetConfig

__all__ = ["TrainConfig", "config_load", "config_loads", "config_dumps", "config_save"]


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run needs; defaults are the full-scale recipe."""

    scale: int = 2
    k: int = 85
    kernel_size: int = 5
    stages_lmcsc: int = 3
    stages_guidance: int = 3
    tied_weights: bool = False
    patch_size: int = 64
    patches_total: int = 40000
    batch_size: int = 32
    lr: float = 1e-4
    steps: int = 50000
    seed: int = 0
    manifest_path: str = ""
    output_dir: str = ""
    # optimizer
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # evaluation / early stopping
    eval_every: int = 500
    val_fraction: float = 0.1
    patience: int = 10
    # initialization
    weight_std: float = 0.01
    mu_init: float = 0.2
    gamma_init: float = 0.2
    # execution
    threads: int = 1

    def __post_init__(self):
        if self.scale not in (2, 4):
            raise ConfigError(f"scale must be 2 or 4, got {self.scale}")
        if self.kernel_size % 2 == 0:
            raise ConfigError(
                f"kernel_size must be odd (symmetric same-padding), got {self.kernel_size}"
            )
        for name in (
            "k",
            "kernel_size",
            "stages_lmcsc",
            "stages_guidance",
            "patch_size",
            "patches_total",
            "batch_size",
            "eval_every",
            "patience",
            "threads",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must lie in [0,1), got {self.val_fraction}")
        if self.weight_std <= 0 or self.mu_init < 0 or self.gamma_init < 0:
            raise ConfigError("invalid initialization values")

    def net_config(self) -> NetConfig:
        return NetConfig(
            k=self.k,
            kernel_size=self.kernel_size,
            lmcsc_stages=self.stages_lmcsc,
            guidance_stages=self.stages_guidance,
            tied_weights=self.tied_weights,
            weight_std=self.weight_std,
            mu_init=self.mu_init,
            gamma_init=self.gamma_init,
        )


_FIELD_TYPES = typing.get_type_hints(TrainConfig)
_PATH_FIELDS = ("manifest_path", "output_dir")


def _coerce(key: str, value):
    want = _FIELD_TYPES[key]
    if want is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if want is float:
        if isinstance(value, bool):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"{key}: expected a number, got {value!r}") from None
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if want is str:
        if value is None:
            return ""
        if isinstance(value, str):
            return value
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    raise ConfigError(f"{key}: unsupported field type {want}")


def config_loads(text: str) -> TrainConfig:
    """Parse a YAML config; empty text yields all defaults."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"config parse error{where}: {e}") from e
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a key/value mapping")
    unknown = sorted(set(data) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {key: _coerce(key, value) for key, value in data.items()}
    return TrainConfig(**kwargs)


def config_load(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_loads(fh.read())


def config_dumps(cfg: TrainConfig, include_paths: bool = True) -> str:
    """Serialize to YAML; round-trips through :func:`config_loads`.

    ``include_paths=False`` drops filesystem fields, for checkpoint
    snapshots that should not depend on where a run happened to live.
    """
    data = dataclasses.asdict(cfg)
    if not include_paths:
        for key in _PATH_FIELDS:
            data.pop(key)
    return yaml.safe_dump(data, sort_keys=True)


def config_save(cfg: TrainConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_dumps(cfg))
