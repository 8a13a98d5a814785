"""JSON experiment configs.

A config is a JSON object; ``kind`` selects ``sanity`` or ``scenario``.
Unknown keys are rejected so typos do not silently fall back to defaults.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path

from ..errors import ConfigError


@dataclass(frozen=True)
class SanityConfig:
    name: str = "sanity"
    seed: int = 0
    n_s: tuple[int, ...] = (60, 300, 600, 1200)
    n_f: tuple[int, ...] = (2, 100, 500)
    reps: int = 25
    prior_rows_per_state: int = 2
    methods: tuple[str, ...] = ("STD", "ISAM", "OTM", "OTM_OO", "DU", "DU_OO")

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if not self.n_s or not self.n_f or min(self.n_s) < 1 or min(self.n_f) < 1:
            raise ConfigError("state sizes and new-row counts must be positive")
        if self.prior_rows_per_state < 1:
            raise ConfigError("prior_rows_per_state must be at least 1")


@dataclass(frozen=True)
class ScenarioConfig:
    """Simulated plan-act-infer run.

    ``sensor_range`` is the planner's prediction gate; the simulated sensor
    reaches ``true_range``.  Model sigmas weight the factors, ``world_*``
    sigmas drive the simulator (zero gives a noise-free world).
    """

    name: str = "scenario"
    seed: int = 0
    steps: int = 200
    field_size: tuple[float, float] = (120.0, 60.0)
    n_landmarks: int = 80
    n_reserve: int = 120
    targets: tuple[tuple[float, float], ...] = ((110.0, 10.0), (110.0, 50.0), (10.0, 50.0),
                                                (10.0, 10.0), (60.0, 30.0))
    start: tuple[float, float, float] = (10.0, 10.0, 0.0)
    goal_radius: float = 3.0
    motion_sigmas: tuple[float, float, float] = (0.05, 0.05, 0.01)
    meas_sigmas: tuple[float, float] = (0.1, 0.01)
    world_motion_sigmas: tuple[float, float, float] = (0.05, 0.05, 0.01)
    world_meas_sigmas: tuple[float, float] = (0.1, 0.01)
    prior_sigmas: tuple[float, float, float] = (0.01, 0.01, 0.005)
    map_sigma: float = 0.5
    world_map_sigma: float = 0.5
    sensor_range: float = 10.0
    true_range: float = 12.0
    horizon: int = 2
    n_headings: int = 8
    step_length: float = 2.0
    w_dist: float = 1.0
    w_unc: float = 1.0
    inconsistency_mode: str = "mixed"
    inconsistency_rate: float = 0.0
    methods: tuple[str, ...] = ("ISAM", "UD_OTM_OO", "OTM", "DU", "DU_OO")
    reps: int = 3

    def __post_init__(self):
        if self.steps < 1 or self.reps < 1:
            raise ConfigError("steps and reps must be positive")
        if not 0.0 <= self.inconsistency_rate <= 1.0:
            raise ConfigError("inconsistency_rate must lie in [0, 1]")
        if self.true_range < self.sensor_range:
            raise ConfigError("true_range must not be shorter than sensor_range")
        if not self.targets:
            raise ConfigError("at least one target is required")
        if self.horizon < 1 or self.n_headings < 1 or self.step_length <= 0:
            raise ConfigError("planner horizon, headings and step length must be positive")
        if min(self.motion_sigmas + self.meas_sigmas + self.prior_sigmas) <= 0 or self.map_sigma <= 0:
            raise ConfigError("model sigmas must be positive")


_KINDS = {"sanity": SanityConfig, "scenario": ScenarioConfig}


def _freeze(v):
    if isinstance(v, list):
        return tuple(_freeze(x) for x in v)
    return v


def config_from_dict(raw: dict):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    kind = raw.pop("kind", None)
    cls = _KINDS.get(kind)
    if cls is None:
        raise ConfigError(f"kind must be one of {sorted(_KINDS)}, got {kind!r}")
    names = {f.name for f in fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown {kind} config keys: {sorted(unknown)}")
    try:
        return cls(**{k: _freeze(v) for k, v in raw.items()})
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(source):
    """Config from a path, a bundled config name (``"smoke"``) or a dict."""
    if isinstance(source, dict):
        return config_from_dict(source)
    path = Path(source)
    try:
        if path.exists():
            text = path.read_text()
        else:
            text = resources.files("rubinfer.configs").joinpath(f"{source}.json").read_text()
    except (OSError, FileNotFoundError) as exc:
        raise ConfigError(f"cannot read config {source!r}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {source!r}: {exc}") from exc
    return config_from_dict(raw)


def with_seed_override(cfg, environ=None):
    """Apply ``BENCH_SEED`` from the environment, if set."""
    environ = os.environ if environ is None else environ
    seed = environ.get("BENCH_SEED")
    if seed is None or seed == "":
        return cfg
    try:
        return replace(cfg, seed=int(seed))
    except ValueError as exc:
        raise ConfigError(f"BENCH_SEED must be an integer, got {seed!r}") from exc
