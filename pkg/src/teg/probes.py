"""Frozen-backbone evaluation: linear probes and clip similarity matrices."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, VideoSample
from .encoder import Encoder
from .errors import ConfigError, ContractError, ProbeError


def max_workers() -> int:
    """Worker cap from ``TEG_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("TEG_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    items = list(items)
    workers = max_workers()
    if workers == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class ProbeConfig:
    task: str = "event"  # or "sequence"
    epochs: int = 100
    lr: float = 0.5
    batch: int = 64
    seed: int = 0
    weight_decay: float = 1e-4
    train_fraction: float = 0.5
    # sequence task: length of the clips a video is described by (None: whole video)
    clip_frames: int | None = 32
    clips_per_video: int = 4

    def validate(self) -> None:
        if self.task not in ("event", "sequence"):
            raise ConfigError(f"unknown probe task {self.task!r}")
        if not self.lr > 0:
            raise ConfigError(f"probe lr must be > 0, got {self.lr}")
        if self.epochs < 0 or self.batch < 1:
            raise ConfigError("probe epochs must be >= 0 and batch >= 1")
        if not 0 < self.train_fraction < 1:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.clip_frames is not None and self.clip_frames < 1:
            raise ConfigError("clip_frames must be >= 1")
        if self.clips_per_video < 1:
            raise ConfigError("clips_per_video must be >= 1")


def extract_features(encoder: Encoder, video, span: tuple[int, int]) -> np.ndarray:
    """Mean backbone feature over frames ``span[0]:span[1]`` (stride 1)."""
    frames = video.frames if isinstance(video, VideoSample) else np.asarray(video)
    start, stop = span
    if not 0 <= start < stop <= frames.shape[0]:
        raise ContractError(f"span {span} is empty or outside a video of {frames.shape[0]} frames")
    return encoder.forward_backbone(frames[start:stop]).values.mean(axis=0)


def event_features(encoder: Encoder, dataset: Dataset):
    """One pooled feature per ground-truth event segment.

    Returns ``(X, y, video_ids)``.
    """
    def one(i):
        video = dataset[i]
        feats = encoder.forward_backbone(video.frames).values
        rows = [(feats[a:b].mean(axis=0), label) for a, b, label in video.segments()]
        return rows

    rows, labels, vids = [], [], []
    for i, per_video in enumerate(parallel_map(one, range(len(dataset)))):
        for x, label in per_video:
            rows.append(x)
            labels.append(label)
            vids.append(i)
    return np.stack(rows), np.asarray(labels), np.asarray(vids)


def sequence_spans(num_frames: int, clip_frames: int | None, clips: int) -> list[tuple[int, int]]:
    """``clips`` evenly spaced spans of ``clip_frames`` frames (or the whole video)."""
    if clip_frames is None or clip_frames >= num_frames:
        return [(0, num_frames)]
    starts = np.linspace(0, num_frames - clip_frames, clips).round().astype(int)
    return [(int(s), int(s) + clip_frames) for s in starts]


def sequence_features(encoder: Encoder, dataset: Dataset, clip_frames: int | None = 32,
                      clips_per_video: int = 4):
    """Clip-level features labelled with the video's theme; ``(X, y, video_ids)``."""
    def one(i):
        video = dataset[i]
        spans = sequence_spans(video.num_frames, clip_frames, clips_per_video)
        return [extract_features(encoder, video, s) for s in spans]

    rows, labels, vids = [], [], []
    for i, feats in enumerate(parallel_map(one, range(len(dataset)))):
        rows.extend(feats)
        labels.extend([dataset[i].theme_label] * len(feats))
        vids.extend([i] * len(feats))
    return np.stack(rows), np.asarray(labels), np.asarray(vids)


def split_by_video(video_ids: np.ndarray, train_fraction: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Boolean train/test masks that never split one video across both sides."""
    videos = np.unique(video_ids)
    order = np.random.default_rng(seed).permutation(videos)
    n_train = int(round(train_fraction * videos.size))
    train_videos = order[:n_train]
    train = np.isin(video_ids, train_videos)
    return train, ~train


@dataclass
class ProbeResult:
    accuracy: float
    train_accuracy: float
    weights: np.ndarray
    bias: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    num_classes: int
    classes: np.ndarray = field(repr=False, default=None)

    def predict(self, X: np.ndarray) -> np.ndarray:
        logits = ((X - self.mean) / self.scale) @ self.weights + self.bias
        return self.classes[np.argmax(logits, axis=1)]


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def linear_probe(X_train: np.ndarray, y_train: np.ndarray, X_test: np.ndarray,
                 y_test: np.ndarray, cfg: ProbeConfig) -> ProbeResult:
    """Multinomial logistic regression by minibatch SGD on standardized features."""
    cfg.validate()
    classes = np.unique(y_train)
    if classes.size < 2:
        raise ProbeError(f"need at least 2 classes in the training split, got {classes.size}")
    y_idx = np.searchsorted(classes, y_train)
    mean = X_train.mean(axis=0)
    scale = X_train.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    Xs = (X_train - mean) / scale
    rng = np.random.default_rng([cfg.seed, 7])
    k, dim = classes.size, X_train.shape[1]
    W = rng.normal(0.0, 0.01, size=(dim, k))
    b = np.zeros(k)
    onehot = np.eye(k)[y_idx]
    n = Xs.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch):
            idx = order[lo:lo + cfg.batch]
            p = _softmax(Xs[idx] @ W + b)
            g = (p - onehot[idx]) / idx.size
            W -= cfg.lr * (Xs[idx].T @ g + cfg.weight_decay * W)
            b -= cfg.lr * g.sum(axis=0)
    result = ProbeResult(0.0, 0.0, W, b, mean, scale, int(k), classes)
    result.train_accuracy = float(np.mean(result.predict(X_train) == y_train))
    result.accuracy = (float(np.mean(result.predict(X_test) == y_test))
                       if len(y_test) else float("nan"))
    return result


def run_probe(encoder: Encoder, dataset: Dataset, cfg: ProbeConfig) -> ProbeResult:
    """Extract frozen features for ``cfg.task`` and fit a probe on a video-level split."""
    cfg.validate()
    if cfg.task == "event":
        X, y, vids = event_features(encoder, dataset)
    else:
        X, y, vids = sequence_features(encoder, dataset, cfg.clip_frames, cfg.clips_per_video)
    train, test = split_by_video(vids, cfg.train_fraction, [cfg.seed, 3])
    return linear_probe(X[train], y[train], X[test], y[test], cfg)


def uniform_spans(num_frames: int, count: int = 5) -> list[tuple[int, int]]:
    """``count`` consecutive equal-length spans covering the video."""
    if num_frames < count:
        raise ContractError(f"video of {num_frames} frames cannot hold {count} spans")
    edges = np.linspace(0, num_frames, count + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def similarity_matrix(encoder: Encoder, video, spans=None, count: int = 5) -> np.ndarray:
    """Cosine similarities between pooled backbone features of consecutive clips."""
    frames = video.frames if isinstance(video, VideoSample) else np.asarray(video)
    spans = spans or uniform_spans(frames.shape[0], count)
    feats = np.stack([extract_features(encoder, frames, s) for s in spans])
    unit = feats / np.linalg.norm(feats, axis=1, keepdims=True)
    sim = unit @ unit.T
    return 0.5 * (sim + sim.T)


def span_majority_events(video: VideoSample, spans) -> list[int]:
    return [int(np.bincount(video.event_labels[a:b]).argmax()) for a, b in spans]


def cross_event_similarity(encoder: Encoder, videos, count: int = 5) -> float:
    """Mean similarity over clip pairs whose majority event differs."""
    vals = []
    for video in videos:
        spans = uniform_spans(video.num_frames, count)
        sim = similarity_matrix(encoder, video, spans)
        ev = span_majority_events(video, spans)
        for i in range(count):
            for j in range(i + 1, count):
                if ev[i] != ev[j]:
                    vals.append(sim[i, j])
    return float(np.mean(vals)) if vals else float("nan")
