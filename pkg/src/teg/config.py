"""Experiment configuration files (JSON) and their provenance hash.

A config file holds any subset of the sections below; missing keys keep
their defaults, unknown keys are rejected::

    {
      "seed": 0,
      "out_dir": "runs/demo",
      "generator": {"num_videos": 200, "noise_sigma": 1.5},
      "encoder": {"feature_dim": 4},
      "train": {"epochs": 120, "loss": {"alpha": 0.9, "agg": {"n": 1, "m": 4}}},
      "probe": {"epochs": 100},
      "window": {"rel_dis": 0.05},
      "boundary": {"pairing": "concat_absdiff"},
      "similarity_videos": 50
    }
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .benchmark import BenchmarkConfig, BoundaryTrainConfig
from .boundary import WindowConfig
from .data import GeneratorConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .losses import PRESETS, AggregationConfig, LossConfig
from .probes import ProbeConfig
from .sampling import SamplingMode
from .train import TrainConfig

_DEFAULT = BenchmarkConfig()


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    generator: GeneratorConfig = _DEFAULT.generator
    encoder: EncoderConfig = _DEFAULT.encoder
    train: TrainConfig = _DEFAULT.train
    probe: ProbeConfig = _DEFAULT.probe
    window: WindowConfig = _DEFAULT.window
    boundary: BoundaryTrainConfig = _DEFAULT.boundary
    similarity_videos: int = _DEFAULT.similarity_videos

    def validate(self) -> None:
        self.generator.validate()
        encoder = dataclasses.replace(self.encoder, input_dim=self.generator.feature_dim)
        encoder.validate()
        self.train.validate()
        self.probe.validate()
        self.window.validate()
        if self.boundary.pairing not in ("concat", "concat_absdiff"):
            raise ConfigError(f"unknown boundary pairing {self.boundary.pairing!r}")
        if self.similarity_videos < 1:
            raise ConfigError("similarity_videos must be >= 1")
        t = self.train
        long_T, short_T = t.clip_lengths()
        stride = t.short_stride if SamplingMode(t.mode).symmetric else t.long_stride
        span = max((long_T - 1) * stride + 1, (short_T - 1) * t.short_stride + 1)
        if span > self.generator.frames_per_video:
            raise ConfigError(f"clips span {span} frames but videos have only "
                              f"{self.generator.frames_per_video}")
        if self.train.batch_size > self.generator.num_videos:
            raise ConfigError(f"train.batch_size {self.train.batch_size} exceeds "
                              f"generator.num_videos {self.generator.num_videos}")

    def benchmark(self) -> BenchmarkConfig:
        bench = BenchmarkConfig(self.generator, self.encoder, self.train, self.probe,
                                self.window, self.boundary, self.similarity_videos)
        return bench.with_seed(self.seed)

    def with_overrides(self, seed: int | None = None, out_dir: str | None = None,
                       preset: str | None = None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = dataclasses.replace(cfg, seed=seed)
        if out_dir is not None:
            cfg = dataclasses.replace(cfg, out_dir=out_dir)
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}, expected one of {sorted(PRESETS)}")
            loss = dataclasses.replace(cfg.train.loss, alpha=PRESETS[preset])
            cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, loss=loss))
        return cfg

    def to_dict(self) -> dict:
        return _plain(self)

    def hash(self) -> str:
        """sha256 of the canonical JSON of everything that shapes the results."""
        d = self.to_dict()
        d.pop("out_dir")
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        cfg = _build(cls, data, "")
        cfg.validate()
        return cfg


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig()
        cfg.validate()
        return cfg
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return ExperimentConfig.from_dict(data)


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (list, tuple)):
        return [_plain(x) for x in obj]
    return obj


_SCALARS = (bool, int, float, str)


def _check_scalar(value, hint, where: str):
    """Coerce JSON scalars to the annotated type (ints are accepted as floats)."""
    args = typing.get_args(hint)
    if value is None:
        if type(None) in args:
            return None
        raise ConfigError(f"{where} must not be null")
    if args:  # Optional[X] / X | None
        hint = next(a for a in args if a is not type(None))
    if isinstance(hint, type) and issubclass(hint, enum.Enum):
        try:
            return hint(value)
        except ValueError:
            raise ConfigError(f"{where}: {value!r} is not one of "
                              f"{[m.value for m in hint]}") from None
    if hint is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if hint is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if hint in (bool, str) and isinstance(value, hint):
        return value
    raise ConfigError(f"{where} must be of type {getattr(hint, '__name__', hint)}, "
                      f"got {type(value).__name__}")


def _build(cls, data, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'} must be an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if not f.name.startswith("_")}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key {prefix}{unknown[0]}")
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        where = f"{prefix}{key}"
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value, where + ".")
        elif hint in _SCALARS or typing.get_args(hint) or (
                isinstance(hint, type) and issubclass(hint, enum.Enum)):
            kwargs[key] = _check_scalar(value, hint, where)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from exc


__all__ = [
    "AggregationConfig",
    "ExperimentConfig",
    "LossConfig",
    "SamplingMode",
    "load_config",
]
