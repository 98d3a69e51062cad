"""Run configuration: architectural widths and training hyperparameters.

Stored as plain ``key=value`` text; unknown keys are rejected by name.
Defaults reproduce the published training protocol.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .errors import ConfigError


@dataclasses.dataclass
class Config:
    channels: int = 128
    small_channels: int = 32
    reduction_ratio: int = 8
    mu: float = 0.96
    lambda1: float = 0.1
    lambda2: float = 0.1
    lr: float = 1e-4
    lr_decay: float = 0.5
    lr_step: int = 500
    epochs: int = 3000
    batch: int = 6
    crop: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights lambda1/lambda2 must be non-negative")
        if self.channels % 4:
            raise ConfigError(f"channels must be divisible by 4, got {self.channels}")
        if self.channels % self.reduction_ratio:
            raise ConfigError(
                f"channels {self.channels} not divisible by reduction_ratio "
                f"{self.reduction_ratio}")


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(Config)}


def parse_config(text: str) -> Config:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        caster = int if _FIELD_TYPES[key] in ("int", int) else float
        try:
            values[key] = caster(val)
        except ValueError:
            raise ConfigError(f"config key {key!r}: cannot parse {val!r}") from None
    return Config(**values)


def load_config(path: str | Path) -> Config:
    return parse_config(Path(path).read_text())
