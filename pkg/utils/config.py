"""Configuration management utilities."""
import copy
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import yaml


class ConfigError(Exception):
    """Raised when configuration is invalid."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


AUTO = "auto"

DEFAULTS: Dict[str, Any] = {
    "paths": {
        "video_dir": None,
        "annotations": None,
        "workdir": "work",
    },
    "seed": 0,
    "downscale": 4,
    "train_frames": 110,
    "link_overlap": 1,
    "scene": {
        "height": 96,
        "width": 128,
        "frames": 160,
        "cells": 25,
        "radius_min": 6.0,
        "radius_max": 9.0,
        "step_sigma": 0.5,
        "mitosis_rate": 0.01,
        "length_min": 4,
        "length_max": 9,
        "background": 0.55,
        "interior_contrast": 0.25,
        "halo_contrast": 0.3,
        "noise_sigma": 0.02,
        "growth_rate": 0.25,
        "death_rate": 0.0,
    },
    "m1": {
        "n": 6,
        "widths": [16, 16],
        "kernel": 5,
        "iterations": 4000,
        "noise": 0.2,
        "learning_rate": 1e-3,
        "decay": 0.9,
        "channel": AUTO,
        "area_min": 4,
        "area_max": 400,
        "compactness": 0.5,
        "sample_frames": 8,
    },
    "event_sim": {
        "probability": 0.3,
        "length_min": 2,
        "length_max": 10,
        "min_flank": 1,
    },
    "m2": {
        "window": 20,
        "iterations": 2000,
        "channels": 16,
        "hidden": 16,
        "kernel": 3,
        "learning_rate": 1e-3,
        "decay": 0.9,
        "percentile_rule": "linear",
    },
    "m3": {
        "k": AUTO,
        "frames": AUTO,
        "train_start": None,
        "iterations": 6000,
        "hidden": 16,
        "decoder_width": 16,
        "kernel": 3,
        "dropout": 0.3,
        "learning_rate": 1e-3,
        "decay": 0.9,
        "stride": 2,
        "workers": 1,
    },
    "evaluation": {
        "spatial_tolerance": 10.0,
        "temporal_tolerances": [1, 3],
    },
    "sweep": {
        "k_values": [4, 6, 8, 10, 14, 18, 22],
        "frame_values": [4, 6, 8, 10, 14, 18, 22],
        "workers": 1,
    },
}

_POSITIVE_INTS = [
    "downscale", "train_frames", "link_overlap",
    "scene.height", "scene.width", "scene.frames", "scene.cells", "scene.length_min", "scene.length_max",
    "m1.n", "m1.kernel", "m1.area_min", "m1.area_max", "m1.sample_frames",
    "event_sim.length_min", "event_sim.length_max", "event_sim.min_flank",
    "m2.window", "m2.channels", "m2.hidden", "m2.kernel",
    "m3.hidden", "m3.decoder_width", "m3.kernel", "m3.stride", "m3.workers", "sweep.workers",
]
_NON_NEGATIVE_INTS = ["seed", "m1.iterations", "m2.iterations", "m3.iterations"]
_UNIT_INTERVAL = ["event_sim.probability", "m3.dropout", "m1.noise", "m1.compactness",
                  "m1.decay", "m2.decay", "m3.decay", "scene.mitosis_rate", "scene.death_rate"]
_POSITIVE_FLOATS = ["m1.learning_rate", "m2.learning_rate", "m3.learning_rate",
                    "evaluation.spatial_tolerance", "scene.radius_min", "scene.radius_max"]


def _merge(base: Dict[str, Any], update: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"Unknown config key: {path}", path)
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"'{path}' must be a mapping", path)
            _merge(base[key], value, f"{path}.")
        else:
            base[key] = value
    return base


class Config:
    """Configuration manager with validation.

    Values resolve as flag override > config file > built-in default.
    """

    def __init__(self, config_path: Optional[Union[str, Path]] = None,
                 overrides: Optional[Mapping[str, Any]] = None,
                 data: Optional[Mapping[str, Any]] = None):
        self.config_path = Path(config_path) if config_path else None
        self._config = copy.deepcopy(DEFAULTS)
        loaded = self._load_config() if self.config_path else (data or {})
        _merge(self._config, loaded)
        for key, value in (overrides or {}).items():
            self.set(key, value)
        self._validate_config()

    def _load_config(self) -> Dict[str, Any]:
        """Load configuration from a YAML (or JSON) file."""
        if not self.config_path.exists():
            raise ConfigError(f"Configuration file not found: {self.config_path}")
        try:
            with open(self.config_path, "r", encoding="utf-8") as f:
                loaded = yaml.safe_load(f)
        except UnicodeDecodeError as e:
            raise ConfigError(f"Config file is not valid UTF-8: {e}")
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML/JSON in config file: {e}")
        if loaded is None:
            return {}
        if not isinstance(loaded, dict):
            raise ConfigError("Config file must contain a mapping at the top level")
        return loaded

    def _validate_config(self) -> None:
        """Validate configuration values."""
        for key in _POSITIVE_INTS + _NON_NEGATIVE_INTS:
            value = self.get(key)
            floor = 0 if key in _NON_NEGATIVE_INTS else 1
            if isinstance(value, bool) or not isinstance(value, int) or value < floor:
                kind = "non-negative" if floor == 0 else "positive"
                raise ConfigError(f"'{key}' must be a {kind} integer, got {value!r}", key)
        for key in _UNIT_INTERVAL:
            value = self.get(key)
            if not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
                raise ConfigError(f"'{key}' must be a number in [0, 1], got {value!r}", key)
        for key in _POSITIVE_FLOATS:
            value = self.get(key)
            if not isinstance(value, (int, float)) or value <= 0:
                raise ConfigError(f"'{key}' must be a positive number, got {value!r}", key)

        if self.get("m1.n") < 2:
            raise ConfigError("'m1.n' must be at least 2 feature maps", "m1.n")
        for key in ("m1.kernel", "m2.kernel", "m3.kernel"):
            if self.get(key) % 2 == 0:
                raise ConfigError(f"'{key}' must be odd so padding preserves the frame size", key)
        for key in ("m3.k", "m3.frames"):
            value = self.get(key)
            if value != AUTO and (isinstance(value, bool) or not isinstance(value, int) or value < 1):
                raise ConfigError(f"'{key}' must be a positive integer or 'auto', got {value!r}", key)
        start = self.get("m3.train_start")
        if start is not None and (isinstance(start, bool) or not isinstance(start, int) or start < 0):
            raise ConfigError(f"'m3.train_start' must be a frame index or null, got {start!r}", "m3.train_start")
        channel = self.get("m1.channel")
        if channel != AUTO and (isinstance(channel, bool) or not isinstance(channel, int) or channel < 0):
            raise ConfigError(f"'m1.channel' must be a channel index or 'auto', got {channel!r}", "m1.channel")
        if self.get("m2.percentile_rule") not in ("linear", "nearest"):
            raise ConfigError("'m2.percentile_rule' must be 'linear' or 'nearest'", "m2.percentile_rule")
        tolerances = self.get("evaluation.temporal_tolerances")
        if not isinstance(tolerances, list) or not tolerances or any(t not in (1, 3) for t in tolerances):
            raise ConfigError("'evaluation.temporal_tolerances' must list values from {1, 3}",
                              "evaluation.temporal_tolerances")
        for low, high in (("scene.length_min", "scene.length_max"),
                          ("event_sim.length_min", "event_sim.length_max"),
                          ("scene.radius_min", "scene.radius_max")):
            if self.get(low) > self.get(high):
                raise ConfigError(f"'{low}' exceeds '{high}'", low)
        if self.get("scene.length_min") < 2:
            raise ConfigError("'scene.length_min' must be at least 2 frames", "scene.length_min")
        for key in ("sweep.k_values", "sweep.frame_values", "m1.widths"):
            values = self.get(key)
            if not isinstance(values, list) or not values or any(
                    isinstance(v, bool) or not isinstance(v, int) or v < 1 for v in values):
                raise ConfigError(f"'{key}' must be a non-empty list of positive integers", key)
        if len(self.get("m1.widths")) != 2:
            raise ConfigError("'m1.widths' must give the two hidden encoder widths", "m1.widths")

    def set(self, key: str, value: Any) -> None:
        """Set a value by dotted key path; unknown paths are rejected."""
        keys = key.split(".")
        node = self._config
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                raise ConfigError(f"Unknown config key: {key}", key)
            node = node[k]
        if keys[-1] not in node or isinstance(node[keys[-1]], dict):
            raise ConfigError(f"Unknown config key: {key}", key)
        node[keys[-1]] = value

    @property
    def seed(self) -> int:
        return self._config["seed"]

    @property
    def downscale(self) -> int:
        return self._config["downscale"]

    @property
    def train_frames(self) -> int:
        return self._config["train_frames"]

    @property
    def link_overlap(self) -> int:
        return self._config["link_overlap"]

    @property
    def workdir(self) -> Path:
        return Path(self._config["paths"]["workdir"])

    @property
    def video_dir(self) -> Path:
        configured = self._config["paths"]["video_dir"]
        return Path(configured) if configured else self.workdir / "simulation" / "video"

    @property
    def annotations_path(self) -> Path:
        configured = self._config["paths"]["annotations"]
        return Path(configured) if configured else self.workdir / "simulation" / "annotations.csv"

    @property
    def temporal_tolerances(self) -> List[int]:
        return list(self._config["evaluation"]["temporal_tolerances"])

    def section(self, name: str) -> Dict[str, Any]:
        return copy.deepcopy(self._config[name])

    def as_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self._config)

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value by dotted key path."""
        keys = key.split('.')
        value = self._config

        for k in keys:
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default

        return value
