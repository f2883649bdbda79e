"""Aggregate pipeline configuration and its TOML file form.

Precedence when resolving: dataclass defaults < config file < CLI flags.
``None`` values are omitted from the file (TOML has no null).
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .deep_mag import DeepMagConfig
from .errors import ConfigError
from .media_io import DecodeConfig
from .phase_mag import PhaseConfig
from .pyramid import PyramidConfig
from .sampler import SamplerConfig


@dataclass(frozen=True)
class ClassifierSettings:
    width_multiplier: float = 1.0
    dropout: float = 0.5
    epochs: int = 100
    lr: float = 1e-4
    batch: int = 8
    val_fraction: float = 0.15

    def __post_init__(self) -> None:
        if not 0.0 < self.width_multiplier <= 1.0:
            raise ConfigError(f"width_multiplier must be in (0, 1], got {self.width_multiplier}")
        if self.epochs < 0 or self.batch < 1 or self.lr <= 0:
            raise ConfigError("epochs must be >= 0, batch >= 1 and lr > 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")


@dataclass(frozen=True)
class MagnifierTraining:
    pairs: int = 400
    patch: int = 40
    epochs: int = 20
    lr: float = 2e-3
    batch: int = 8


SECTIONS = {
    "sampler": SamplerConfig,
    "phase": PhaseConfig,
    "pyramid": PyramidConfig,
    "deep": DeepMagConfig,
    "classifier": ClassifierSettings,
    "magnifier_training": MagnifierTraining,
    "decode": DecodeConfig,
}


@dataclass(frozen=True)
class PipelineConfig:
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    phase: PhaseConfig = field(default_factory=PhaseConfig)
    pyramid: PyramidConfig = field(default_factory=PyramidConfig)
    deep: DeepMagConfig = field(default_factory=DeepMagConfig)
    classifier: ClassifierSettings = field(default_factory=ClassifierSettings)
    magnifier_training: MagnifierTraining = field(default_factory=MagnifierTraining)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    seed: int = 0
    workers: int = 1
    cache_dir: str | None = None
    min_group_count: int = 5

    def __post_init__(self) -> None:
        if self.phase.t > self.sampler.omega:
            raise ConfigError(f"t={self.phase.t} exceeds omega={self.sampler.omega}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def fused_frames(self) -> int:
        return self.sampler.omega - self.phase.t + 1

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **sections: Mapping[str, Any]) -> "PipelineConfig":
        """Return a copy with per-section overrides, e.g. ``replace(phase={"t": 3}, seed=1)``."""
        kwargs: dict[str, Any] = {}
        for name, value in sections.items():
            if name in SECTIONS:
                kwargs[name] = _replace_section(getattr(self, name), dict(value))
            else:
                kwargs[name] = value
        try:
            return dataclasses.replace(self, **kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _replace_section(obj, values: dict[str, Any]):
    fields = {f.name: f for f in dataclasses.fields(obj)}
    unknown = set(values) - set(fields)
    if unknown:
        raise ConfigError(f"unknown {type(obj).__name__} keys: {sorted(unknown)}")
    coerced = {}
    for k, v in values.items():
        current = getattr(obj, k)
        if isinstance(current, bool) or v is None:
            coerced[k] = v
        elif isinstance(current, float) and isinstance(v, int):
            coerced[k] = float(v)
        else:
            coerced[k] = v
    return dataclasses.replace(obj, **coerced)


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize {v!r} to TOML")


def dumps(config: PipelineConfig) -> str:
    d = config.to_dict()
    lines = []
    for k, v in d.items():
        if k not in SECTIONS and v is not None:
            lines.append(f"{k} = {_toml_value(v)}")
    for name in SECTIONS:
        lines.append("")
        lines.append(f"[{name}]")
        for k, v in d[name].items():
            if v is not None:
                lines.append(f"{k} = {_toml_value(v)}")
    return "\n".join(lines) + "\n"


def from_mapping(data: Mapping[str, Any], base: PipelineConfig | None = None) -> PipelineConfig:
    base = base or PipelineConfig()
    top = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(data) - top
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return base.replace(**data)


def loads(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad config file: {exc}") from exc
    return from_mapping(data, base)


def load(path: str | Path, base: PipelineConfig | None = None) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text, base)
