"""Registration configuration and its ``morphfit-config v1`` file format.

Example file::

    morphfit-config v1
    alpha = 1.0
    gamma = 10.0
    eta = 0.1
    beta_schedule = [100.0, 51.8, 26.8, 13.9, 7.2, 3.7, 1.9, 1.0]
    epsilon = 1e-4

    [pruning]
    max_distance = 5.0

    [smoothing]
    delta = 0.8
    paper_literal = false
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .prewarp import SmoothingConfig
from .solver import PruningConfig
from .textfmt import read_toml, toml_value

__all__ = ["RegistrationConfig", "read_config", "write_config", "default_beta_schedule", "CONFIG_HEADER"]

CONFIG_HEADER = "morphfit-config v1"


def default_beta_schedule(start=100.0, stop=1.0, stages=8):
    """Geometric stiffness schedule from ``start`` down to ``stop``."""
    return tuple(float(b) for b in np.geomspace(start, stop, stages))


@dataclass(frozen=True)
class RegistrationConfig:
    alpha: float = 1.0
    gamma: float = 10.0
    eta: float = 0.1
    beta_schedule: tuple = field(default_factory=default_beta_schedule)
    epsilon: float = 1e-4
    max_inner_iterations: int = 20
    translation_weight: float = 1.0
    normal_term: bool = True
    recompute_normals: bool = False
    anneal_landmarks: bool = False
    pruning: PruningConfig = field(default_factory=PruningConfig)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)

    def __post_init__(self):
        object.__setattr__(self, "beta_schedule", tuple(float(b) for b in self.beta_schedule))
        for name in ("alpha", "gamma", "eta", "epsilon", "translation_weight"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"config {name} must be >= 0")
        if self.max_inner_iterations < 1:
            raise ValidationError("max_inner_iterations must be >= 1")

    def replace(self, **changes) -> "RegistrationConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        """Fully resolved, JSON-friendly snapshot (defaults included)."""
        d = dataclasses.asdict(self)
        d["beta_schedule"] = list(self.beta_schedule)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RegistrationConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "pruning" in data:
                data["pruning"] = PruningConfig(**data["pruning"])
            if "smoothing" in data:
                data["smoothing"] = SmoothingConfig(**data["smoothing"])
            return cls(**data)
        except TypeError as exc:
            raise ValidationError(f"bad config: {exc}") from None


def read_config(path) -> RegistrationConfig:
    try:
        return RegistrationConfig.from_dict(read_toml(path, CONFIG_HEADER))
    except ValidationError as exc:
        raise ValidationError(f"{os.fspath(path)}: {exc}") from None


def write_config(path, config: RegistrationConfig):
    d = config.to_dict()
    lines = [CONFIG_HEADER]
    tables = {}
    for key, value in d.items():
        if isinstance(value, dict):
            tables[key] = value
        else:
            lines.append(f"{key} = {toml_value(value)}")
    for name, table in tables.items():
        lines += ["", f"[{name}]"]
        lines += [f"{k} = {toml_value(v)}" for k, v in table.items() if v is not None]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
