"""Run configuration: defaults, config-file loading, and flag merging.

A config file is a flat JSON object whose keys mirror the CLI flags;
explicit flags override file values, which override defaults.  Every
command resolves to a full `RunConfig`, and the SHA-256 hash of the
resolved configuration is embedded in all outputs so artifacts can be
traced back to the exact settings that produced them.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .exceptions import ConfigError
from .samplers import TASKS

SCORE_KINDS = ("CPO", "Box", "Ellipsoid", "PTC-B", "PTC-E")


@dataclass
class RunConfig:
    task: str = "gaussian_linear"
    alpha: float = 0.05
    k: int = 10
    k_max: int = 15
    epsilon: float | None = None
    samples_per_ball: int = 1000
    steps: int = 2000
    eta: float | str = "auto"
    rp_count: int = 5
    seed: int = 0
    score: str = "CPO"
    x_index: int = 0
    n_train: int = 500
    n_cal: int = 1000
    n_cal2: int = 300
    n_test: int = 1000
    n_instances: int = 10
    grid_rows: int = 8
    grid_cols: int = 8
    raster: int = 16
    frames: int = 2
    abc_tolerance: float | None = None
    abc_budget: int = 400_000
    connect_radius: float | None = None
    out: str = "out"

    def validate(self) -> "RunConfig":
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; available tasks: {', '.join(sorted(TASKS))}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.score not in SCORE_KINDS:
            raise ConfigError(f"unknown score {self.score!r}; available: {', '.join(SCORE_KINDS)}")
        for name in ("k", "k_max", "samples_per_ball", "steps", "rp_count", "n_train", "n_cal", "n_cal2", "n_test", "n_instances", "abc_budget"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.eta != "auto":
            try:
                self.eta = float(self.eta)
            except (TypeError, ValueError):
                raise ConfigError(f"eta must be a number or 'auto', got {self.eta!r}") from None
            if self.eta <= 0:
                raise ConfigError(f"eta must be positive, got {self.eta}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if not isinstance(self.x_index, int) or self.x_index < 0:
            raise ConfigError(f"x_index must be a nonnegative integer, got {self.x_index!r}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.abc_tolerance is not None and not self.abc_tolerance > 0:
            raise ConfigError(f"abc_tolerance must be positive, got {self.abc_tolerance}")
        if self.connect_radius is not None and not self.connect_radius > 0:
            raise ConfigError(f"connect_radius must be positive, got {self.connect_radius}")
        if self.grid_rows < 2 or self.grid_cols < 2 or self.raster < 2 or self.frames < 1:
            raise ConfigError("grid_rows, grid_cols, and raster must be >= 2 and frames >= 1")
        return self


_FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}


def load_config_file(path: str | Path) -> dict:
    """Read a flat key/value JSON config document."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a flat JSON object")
    unknown = sorted(set(doc) - _FIELD_NAMES)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return doc


def resolve_config(config_path: str | None, overrides: dict) -> RunConfig:
    """Defaults, then config-file values, then explicit flag overrides."""
    merged: dict = {}
    if config_path is not None:
        merged.update(load_config_file(config_path))
    merged.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(merged) - _FIELD_NAMES)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        cfg = RunConfig(**merged)
    except TypeError as err:
        raise ConfigError(str(err)) from None
    return cfg.validate()


def config_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg: RunConfig) -> str:
    """Short stable digest of the resolved configuration.

    The output directory is excluded: it has no effect on what gets
    computed, only on where it lands.
    """
    doc = config_dict(cfg)
    doc.pop("out")
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]
