"""Synthetic event videos in feature space.

Every frame of a video is the sum of a theme prototype (constant over the
whole video), the prototype of the event active at that frame, and isotropic
Gaussian noise.  The theme is therefore recoverable from temporally
persistent features while the event labels and boundaries need features that
follow content changes inside a video.
"""

from __future__ import annotations

import dataclasses
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

FORMAT_VERSION = 1


@dataclass(frozen=True)
class GeneratorConfig:
    num_videos: int = 200
    frames_per_video: int = 300
    fps: float = 30.0
    feature_dim: int = 32
    num_event_classes: int = 5
    num_theme_classes: int = 4
    events_per_video: int = 5
    noise_sigma: float = 0.1
    min_segment_frames: int = 20
    seed: int = 0

    def validate(self) -> None:
        for name in (
            "num_videos",
            "frames_per_video",
            "feature_dim",
            "num_theme_classes",
            "events_per_video",
            "min_segment_frames",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.events_per_video > 1 and self.num_event_classes < 2:
            raise ConfigError(
                "num_event_classes must be >= 2 when events_per_video > 1 "
                "(adjacent events must differ)"
            )
        if self.num_event_classes < 1:
            raise ConfigError(f"num_event_classes must be >= 1, got {self.num_event_classes}")
        if self.events_per_video * self.min_segment_frames > self.frames_per_video:
            raise ConfigError(
                "events_per_video * min_segment_frames must be <= frames_per_video "
                f"({self.events_per_video} * {self.min_segment_frames} > {self.frames_per_video})"
            )
        if not self.fps > 0:
            raise ConfigError(f"fps must be > 0, got {self.fps}")
        if not self.noise_sigma >= 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


@dataclass
class VideoSample:
    frames: np.ndarray  # (N, d)
    event_labels: np.ndarray  # (N,) int
    theme_label: int
    boundaries: list[float]  # seconds
    fps: float

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def duration(self) -> float:
        return self.num_frames / self.fps

    def segments(self) -> list[tuple[int, int, int]]:
        """(start, stop, event_class) for each event segment, stop exclusive."""
        labels = self.event_labels
        change = np.flatnonzero(np.diff(labels)) + 1
        starts = np.concatenate([[0], change])
        stops = np.concatenate([change, [labels.size]])
        return [(int(a), int(b), int(labels[a])) for a, b in zip(starts, stops)]


@dataclass
class Dataset:
    config: GeneratorConfig
    samples: list[VideoSample]
    theme_prototypes: np.ndarray
    event_prototypes: np.ndarray

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> VideoSample:
        return self.samples[i]

    def __iter__(self):
        return iter(self.samples)


def _segment_lengths(rng: np.random.Generator, n: int, e: int, min_len: int) -> np.ndarray:
    # Uniform over compositions of n into e parts that are all >= min_len.
    slack = n - e * (min_len - 1)
    if e == 1:
        return np.array([n])
    cuts = np.sort(rng.choice(np.arange(1, slack), size=e - 1, replace=False))
    parts = np.diff(np.concatenate([[0], cuts, [slack]]))
    return parts + (min_len - 1)


def _event_sequence(rng: np.random.Generator, e: int, num_classes: int) -> list[int]:
    seq = [int(rng.integers(num_classes))]
    for _ in range(e - 1):
        nxt = int(rng.integers(num_classes - 1))
        seq.append(nxt + (nxt >= seq[-1]))
    return seq


def generate_dataset(cfg: GeneratorConfig) -> Dataset:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    d = cfg.feature_dim
    # Entries of variance 1/d give prototypes of unit expected squared norm.
    themes = rng.standard_normal((cfg.num_theme_classes, d)) / np.sqrt(d)
    events = rng.standard_normal((cfg.num_event_classes, d)) / np.sqrt(d)

    samples = []
    for _ in range(cfg.num_videos):
        theme = int(rng.integers(cfg.num_theme_classes))
        lengths = _segment_lengths(
            rng, cfg.frames_per_video, cfg.events_per_video, cfg.min_segment_frames
        )
        classes = _event_sequence(rng, cfg.events_per_video, cfg.num_event_classes)
        labels = np.repeat(np.asarray(classes, dtype=np.int64), lengths)
        noise = rng.standard_normal((cfg.frames_per_video, d))
        frames = themes[theme] + events[labels] + cfg.noise_sigma * noise
        starts = np.cumsum(lengths)[:-1]
        samples.append(
            VideoSample(
                frames=frames,
                event_labels=labels,
                theme_label=theme,
                boundaries=[float(s / cfg.fps) for s in starts],
                fps=cfg.fps,
            )
        )
    return Dataset(cfg, samples, themes, events)


def augment(frames: np.ndarray, sigma_aug: float, seed) -> np.ndarray:
    """Return ``frames`` plus seeded Gaussian noise of scale ``sigma_aug``.

    ``seed`` is anything accepted by :func:`numpy.random.default_rng`.
    """
    if sigma_aug == 0:
        return np.array(frames, copy=True)
    rng = np.random.default_rng(seed)
    return frames + sigma_aug * rng.standard_normal(frames.shape)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    header = {
        "format": "teg-dataset",
        "version": FORMAT_VERSION,
        "config": dataclasses.asdict(dataset.config),
        "theme_labels": [s.theme_label for s in dataset.samples],
        "boundaries": [s.boundaries for s in dataset.samples],
        "fps": [s.fps for s in dataset.samples],
    }
    buf = io.BytesIO()
    np.savez(
        buf,
        header=np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8),
        frames=np.stack([s.frames for s in dataset.samples]),
        event_labels=np.stack([s.event_labels for s in dataset.samples]),
        theme_prototypes=dataset.theme_prototypes,
        event_prototypes=dataset.event_prototypes,
    )
    Path(path).write_bytes(buf.getvalue())


def load_dataset(path: str | Path) -> Dataset:
    with np.load(Path(path)) as z:
        header = json.loads(z["header"].tobytes().decode("utf-8"))
        if header.get("format") != "teg-dataset" or header.get("version") != FORMAT_VERSION:
            raise ConfigError(f"{path}: unsupported dataset format {header.get('format')!r} "
                              f"v{header.get('version')}")
        frames = z["frames"]
        labels = z["event_labels"]
        themes = z["theme_prototypes"]
        events = z["event_prototypes"]
    cfg = GeneratorConfig(**header["config"])
    samples = [
        VideoSample(
            frames=frames[i],
            event_labels=labels[i],
            theme_label=int(header["theme_labels"][i]),
            boundaries=[float(b) for b in header["boundaries"][i]],
            fps=float(header["fps"][i]),
        )
        for i in range(frames.shape[0])
    ]
    return Dataset(cfg, samples, themes, events)
