"""One JSON document configures every pipeline stage.

The document has five optional sections; every field inside them is
optional too and falls back to the owning module's default:

    {
      "model":   {...},   fields of ModelConfig (k may be omitted; when
                          present it must match the data)
      "train":   {...},   fields of TrainConfig
      "sr":      {...},   fields of SrConfig (training-data cleaning)
      "scoring": {...},   seed, batch_size, q, init_quantile, top_m,
                          protocol, delay
      "paths":   {...}    default file locations, overridable per command
    }

Unknown keys anywhere are rejected up front, so a typo cannot silently
fall back to a default. Loading performs full validation before any
command does work.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .network import ModelConfig
from .preprocess import SrConfig
from .trainer import TrainConfig

PROTOCOLS = ("point-adjust", "delay", "raw-point")

PATH_KEYS = frozenset({
    "out_dir", "train_values", "test_values", "labels", "events",
    "checkpoint", "scores", "calibration_scores", "alarms", "threshold",
    "report", "report_csv", "curve", "attention_dir",
})


@dataclass(frozen=True)
class ScoringConfig:
    """Inference-time knobs: scoring noise, tail fit, and evaluation."""

    seed: int = 0
    batch_size: int = 64
    q: float = 1e-3
    init_quantile: float = 0.98
    # None means auto: display min(8, k) ranks. An explicit value must
    # also not exceed the data's feature count, checked where k is known.
    top_m: int | None = None
    protocol: str = "point-adjust"
    delay: int = 7

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if not (0.0 < self.q < 1.0):
            raise ConfigError(f"q must be in (0, 1), got {self.q}")
        if not (0.0 < self.init_quantile < 1.0):
            raise ConfigError(
                f"init_quantile must be in (0, 1), got {self.init_quantile}")
        if self.top_m is not None and self.top_m < 1:
            raise ConfigError(f"top_m must be positive, got {self.top_m}")
        if self.protocol not in PROTOCOLS:
            raise ConfigError(
                f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.delay < 0:
            raise ConfigError(f"delay must be non-negative, got {self.delay}")


@dataclass(frozen=True)
class RunConfig:
    """Everything a command run is allowed to configure."""

    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    sr: SrConfig = field(default_factory=SrConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    paths: dict = field(default_factory=dict)

    def model_config(self, k: int) -> ModelConfig:
        """Materialize the model section against the data's feature count."""
        overrides = dict(self.model)
        stated = overrides.pop("k", None)
        if stated is not None and stated != k:
            raise ConfigError(
                f"config states k={stated} but the data has {k} features")
        return ModelConfig(k=k, **overrides)

    def path(self, key: str, override=None, required: bool = True):
        """Resolve a file role: command-line override beats the config."""
        if key not in PATH_KEYS:
            raise ConfigError(f"unknown path role {key!r}")
        value = override if override is not None else self.paths.get(key)
        if value is None and required:
            raise ConfigError(
                f"no {key!r} path given; pass the command option or set "
                f"paths.{key} in the config file")
        return value


def _known_fields(cls) -> dict:
    return {f.name: f for f in dataclasses.fields(cls)}


def _build_section(cls, section: dict, name: str):
    known = _known_fields(cls)
    unknown = set(section) - set(known)
    if unknown:
        raise ConfigError(
            f"unknown keys in config section {name!r}: {sorted(unknown)}")
    return cls(**section)


def _check_model_section(section: dict) -> dict:
    known = _known_fields(ModelConfig)
    unknown = set(section) - set(known)
    if unknown:
        raise ConfigError(
            f"unknown keys in config section 'model': {sorted(unknown)}")
    if "k" in section:
        # materialize once to run every ModelConfig invariant now
        ModelConfig(**section)
    elif section:
        ModelConfig(k=1, **section)
    return dict(section)


def _check_sr(sr: SrConfig) -> SrConfig:
    if sr.score_threshold <= 0:
        raise ConfigError(
            f"sr.score_threshold must be positive, got {sr.score_threshold}")
    for name in ("spectrum_window", "local_window", "replacement_window"):
        if getattr(sr, name) < 1:
            raise ConfigError(f"sr.{name} must be positive")
    return sr


def load_run_config(path=None) -> RunConfig:
    """Parse and fully validate a config file; None means all defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            document = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    if not isinstance(document, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    unknown = set(document) - {"model", "train", "sr", "scoring", "paths"}
    if unknown:
        raise ConfigError(
            f"unknown top-level config keys: {sorted(unknown)}")
    for section_name in ("model", "train", "sr", "scoring", "paths"):
        section = document.get(section_name, {})
        if not isinstance(section, dict):
            raise ConfigError(
                f"config section {section_name!r} must be a JSON object")
    paths = document.get("paths", {})
    unknown_paths = set(paths) - PATH_KEYS
    if unknown_paths:
        raise ConfigError(
            f"unknown keys in config section 'paths': {sorted(unknown_paths)}")
    for key, value in paths.items():
        if not isinstance(value, str):
            raise ConfigError(f"paths.{key} must be a string, got {value!r}")
    try:
        return RunConfig(
            model=_check_model_section(document.get("model", {})),
            train=_build_section(TrainConfig, document.get("train", {}), "train"),
            sr=_check_sr(_build_section(SrConfig, document.get("sr", {}), "sr")),
            scoring=_build_section(ScoringConfig, document.get("scoring", {}),
                                   "scoring"),
            paths=dict(paths),
        )
    except TypeError as err:
        raise ConfigError(f"config {path}: {err}") from err
