"""Experiment configuration: a flat TOML table with a fixed schema.

Every key is optional; unknown keys are rejected so a misspelt setting cannot
be silently ignored. Example::

    prior = "rademacher"
    p = 2
    N = [4, 8, 16]
    M = 1.0
    resolution = 5
    n_samples = 4000
    base_seed = 2024
    stages = ["psi", "limit", "finite-n", "curie-weiss"]
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .prior import DiscretePrior, make_prior
from .scalar_channel import DEFAULT_QUAD_ORDER

STAGES = ("psi", "limit", "finite-n", "curie-weiss")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    prior: Any = "rademacher"
    p: int = 2
    N: tuple = (4, 8)
    M: float = 1.0
    resolution: int = 5
    n_samples: int = 1000
    base_seed: int = 0
    budget: int = 2 ** 22
    # limit solvers
    dh: float = 2e-3
    cfl: float = 0.9
    quad_order: int = DEFAULT_QUAD_ORDER
    h_max: float | None = None      # limit window, defaults to M
    t_max: float | None = None      # defaults to M
    psi_h_max: float | None = None  # psi tabulation range, automatic by default
    psi_dh: float = 0.01
    # curie-weiss stage
    cw_N: tuple = (10, 100, 1000)
    fd_delta: float = 1e-4
    stages: tuple = STAGES
    threads: int = 1
    output_dir: str = "results"

    def __post_init__(self):
        try:
            object.__setattr__(self, "N", tuple(int(n) for n in _as_list(self.N)))
            object.__setattr__(self, "cw_N", tuple(int(n) for n in _as_list(self.cw_N)))
            object.__setattr__(self, "stages", tuple(str(s) for s in _as_list(self.stages)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        self.validate()

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(isinstance(self.p, int) and self.p >= 1, "p must be an integer >= 1")
        need(len(self.N) > 0 and all(n >= 1 for n in self.N), "N must be a non-empty list of positive integers")
        need(math.isfinite(self.M) and self.M >= 1, "M must be >= 1")
        need(int(self.resolution) == self.resolution and self.resolution >= 2, "resolution must be an integer >= 2")
        need(self.n_samples >= 1, "n_samples must be >= 1")
        need(0 <= self.base_seed < 2 ** 64, "base_seed must be an unsigned 64-bit integer")
        need(self.budget >= 1, "budget must be positive")
        need(self.dh > 0, "dh must be positive")
        need(0 < self.cfl <= 0.9, "cfl must lie in (0, 0.9]")
        need(self.quad_order >= 1, "quad_order must be positive")
        for key in ("h_max", "t_max", "psi_h_max"):
            v = getattr(self, key)
            need(v is None or (math.isfinite(v) and v > 0), f"{key} must be positive")
        need(self.limit_h_max >= self.M and self.limit_t_max >= self.M,
             "h_max and t_max must cover the [0, M]^2 grid")
        need(self.psi_dh > 0, "psi_dh must be positive")
        need(all(n >= 1 for n in self.cw_N), "cw_N entries must be positive")
        need(self.fd_delta > 0, "fd_delta must be positive")
        unknown = [s for s in self.stages if s not in STAGES]
        need(not unknown, f"unknown stages {unknown}; choose from {list(STAGES)}")
        need(self.threads >= 1, "threads must be >= 1")
        try:
            self.prior_obj
        except ValueError as exc:
            raise ConfigError(f"prior: {exc}") from exc

    @property
    def prior_obj(self) -> DiscretePrior:
        return make_prior(self.prior)

    @property
    def limit_h_max(self) -> float:
        return self.M if self.h_max is None else float(self.h_max)

    @property
    def limit_t_max(self) -> float:
        return self.M if self.t_max is None else float(self.t_max)

    @property
    def grid_axis(self) -> np.ndarray:
        return np.linspace(0.0, self.M, int(self.resolution))

    def result_dict(self) -> dict:
        """Settings that determine the numerical outputs (no paths or thread counts)."""
        d = dataclasses.asdict(self)
        d.pop("output_dir")
        d.pop("threads")
        d["prior"] = self.prior_obj.to_spec()
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    def sha256(self) -> str:
        blob = json.dumps(self.result_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _as_list(v):
    if isinstance(v, (list, tuple)):
        return list(v)
    return [v]


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def config_from_dict(raw: dict) -> ExperimentConfig:
    unknown = sorted(set(raw) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    ints = {"p", "resolution", "n_samples", "base_seed", "budget", "quad_order", "threads"}
    floats = {"M", "dh", "cfl", "h_max", "t_max", "psi_h_max", "psi_dh", "fd_delta"}
    clean = {}
    for k, v in raw.items():
        if k in ints and not (isinstance(v, int) and not isinstance(v, bool)):
            raise ConfigError(f"{k} must be an integer, got {v!r}")
        if k in floats:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{k} must be a number, got {v!r}")
            v = float(v)
        clean[k] = v
    return ExperimentConfig(**clean)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw)
