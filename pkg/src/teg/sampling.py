"""Long/short clip sampling and the symmetric/random ablation modes."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import SamplingError


class SamplingMode(str, enum.Enum):
    LONG_SHORT_CONTAINED = "long-short-contained"
    LONG_SHORT_RANDOM = "long-short-random"
    SHORT_SHORT_RANDOM = "short-short-random"
    SHORT_SHORT_CONTAINED = "short-short-contained"

    @property
    def contained(self) -> bool:
        return self in (SamplingMode.LONG_SHORT_CONTAINED, SamplingMode.SHORT_SHORT_CONTAINED)

    @property
    def symmetric(self) -> bool:
        return self in (SamplingMode.SHORT_SHORT_RANDOM, SamplingMode.SHORT_SHORT_CONTAINED)


@dataclass(frozen=True)
class ClipSpec:
    start_frame: int
    num_frames: int
    stride: int = 1

    def __post_init__(self):
        if self.start_frame < 0 or self.num_frames < 1 or self.stride < 1:
            raise SamplingError(f"invalid clip {self}")

    @property
    def span(self) -> int:
        """Number of original frames covered, first to last inclusive."""
        return (self.num_frames - 1) * self.stride + 1

    @property
    def last_frame(self) -> int:
        return self.start_frame + (self.num_frames - 1) * self.stride

    def contains(self, other: "ClipSpec") -> bool:
        return self.start_frame <= other.start_frame and other.last_frame <= self.last_frame

    def fits(self, num_frames: int) -> bool:
        return self.last_frame < num_frames


@dataclass(frozen=True)
class ClipPair:
    long: ClipSpec
    short: ClipSpec


def frame_indices(clip: ClipSpec) -> np.ndarray:
    return clip.start_frame + clip.stride * np.arange(clip.num_frames)


def _span(t: int, stride: int) -> int:
    return (t - 1) * stride + 1


def sample_clip_pair(
    num_frames: int,
    mode: SamplingMode | str,
    long_T: int,
    long_stride: int,
    short_T: int,
    short_stride: int,
    seed,
) -> ClipPair:
    """Draw a (long, short) clip pair from a video of ``num_frames`` frames.

    ``seed`` may be an int, a seed sequence or a ``numpy.random.Generator``.
    Start frames are uniform over every valid position; in the contained modes
    the short clip is drawn uniformly among the positions inside the long one.
    """
    mode = SamplingMode(mode)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if mode.symmetric:
        long_T, long_stride = short_T, short_stride
    long_span = _span(long_T, long_stride)
    short_span = _span(short_T, short_stride)
    if long_span > num_frames or short_span > num_frames:
        raise SamplingError(
            f"video of {num_frames} frames is shorter than the requested spans "
            f"(long {long_span}, short {short_span})"
        )
    long_start = int(rng.integers(num_frames - long_span + 1))
    if mode.contained:
        if short_span > long_span:
            raise SamplingError(f"short span {short_span} exceeds long span {long_span}")
        short_start = long_start + int(rng.integers(long_span - short_span + 1))
    else:
        short_start = int(rng.integers(num_frames - short_span + 1))
    return ClipPair(
        long=ClipSpec(long_start, long_T, long_stride),
        short=ClipSpec(short_start, short_T, short_stride),
    )
