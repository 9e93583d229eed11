"""Flat INI-style run configuration with typed sections.

Every experiment is driven by one config file of `key = value` lines in
flat sections; command-line flags override file values. Unknown sections
or keys are rejected. Relative paths are resolved against the current
working directory.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    """Bad config file, unknown key, or invalid value (exit code 1)."""


class MissingInputError(FileNotFoundError):
    """Referenced input path does not exist (exit code 2)."""


@dataclass(frozen=True)
class ModelSection:
    checkpoint: str = "model.fmm"
    hidden: int = 16
    kernel: int = 3
    temb_width: int = 8
    cemb_width: int = 8
    vocab: int = 2


@dataclass(frozen=True)
class DataSection:
    manifest: str = "corpus/manifest.csv"
    frames: int = 8
    width: int = 16
    height: int = 16
    channels: int = 4
    n_per_class: int = 50
    blob_count: int = 2
    blob_radius: float = 4.0
    corpus_seed: int = 0

    @property
    def dims(self):
        return (self.frames, self.width, self.height, self.channels)


@dataclass(frozen=True)
class ScheduleSection:
    steps: int = 50
    strategy: str = "euler"


@dataclass(frozen=True)
class TrainSection:
    steps: int = 1500
    batch_size: int = 4
    learning_rate: float = 0.002
    seed: int = 0
    cond_dropout: float = 0.1


@dataclass(frozen=True)
class SampleSection:
    rho: float = 5.0
    seeds: str = "0-3"
    cond: int = 0
    dump_denoised: bool = False


@dataclass(frozen=True)
class GuidanceSection:
    eta: float = 0.005
    refine_steps: str = "0-11"
    optimizer: str = "adam"
    inner_iterations: int = 1
    grad_through_uncond: bool = True


@dataclass(frozen=True)
class GuidanceEffectSection:
    n_seeds: int = 24
    base_seed: int = 0


@dataclass(frozen=True)
class FreeinitSection:
    rounds: int = 2
    order: int = 4
    spatial_cutoff: float = 0.25
    temporal_cutoff: float = 0.25
    t_renoise: float = 0.98


@dataclass(frozen=True)
class OutSection:
    dir: str = "runs/out"


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    train: TrainSection = field(default_factory=TrainSection)
    sample: SampleSection = field(default_factory=SampleSection)
    guidance: GuidanceSection = field(default_factory=GuidanceSection)
    guidance_effect: GuidanceEffectSection = field(
        default_factory=GuidanceEffectSection
    )
    freeinit: FreeinitSection = field(default_factory=FreeinitSection)
    out: OutSection = field(default_factory=OutSection)


_SECTION_TYPES = {
    "model": ModelSection,
    "data": DataSection,
    "schedule": ScheduleSection,
    "train": TrainSection,
    "sample": SampleSection,
    "guidance": GuidanceSection,
    "guidance_effect": GuidanceEffectSection,
    "freeinit": FreeinitSection,
    "out": OutSection,
}


def _parse_value(raw: str, kind, where: str):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {where}: {raw!r}") from exc


def load_config(path=None) -> RunConfig:
    """Parse an INI file into a RunConfig; None gives pure defaults."""
    cfg = RunConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    updates = {}
    for section in parser.sections():
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section [{section}]")
        cls = _SECTION_TYPES[section]
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            kind = type(getattr(cls(), key))
            kwargs[key] = _parse_value(raw, kind, f"[{section}] {key}")
        updates[section] = replace(getattr(cfg, section), **kwargs)
    return replace(cfg, **updates)


def parse_index_set(text: str) -> tuple[int, ...]:
    """Parse "0-11,15,20-22" into a sorted tuple of indices."""
    out = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, _, b = part.partition("-")
            try:
                lo, hi = int(a), int(b)
            except ValueError as exc:
                raise ConfigError(f"bad index range {part!r}") from exc
            if hi < lo:
                raise ConfigError(f"empty index range {part!r}")
            out.update(range(lo, hi + 1))
        else:
            try:
                out.add(int(part))
            except ValueError as exc:
                raise ConfigError(f"bad index {part!r}") from exc
    if not out:
        raise ConfigError(f"empty index set {text!r}")
    return tuple(sorted(out))


def require_file(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"{what} not found: {path}")
    return path
