"""Sliding-window event boundary detection and Rel.Dis F1 scoring.

Windows of ``W`` frames slide over a video; a window is positive when its
center frame lies within ``positive_radius_seconds`` of an annotated
boundary.  A window is described by two frozen-backbone averages, one before
and one from the center frame on, and classified by a logistic head.
Consecutive positive windows merge into one detection at their mean center
time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import Encoder
from .errors import ConfigError, ProbeError
from .probes import parallel_map


@dataclass(frozen=True)
class WindowConfig:
    window_frames: int = 32
    window_stride: int = 3
    center_offset: int = 15  # the 16th frame of the window
    positive_radius_seconds: float = 0.15
    rel_dis: float = 0.05

    def validate(self) -> None:
        if self.window_frames < 1 or self.window_stride < 1:
            raise ConfigError("window_frames and window_stride must be >= 1")
        if not 0 <= self.center_offset < self.window_frames:
            raise ConfigError(
                f"center_offset must lie in [0, {self.window_frames}), got {self.center_offset}"
            )
        if not self.positive_radius_seconds > 0:
            raise ConfigError("positive_radius_seconds must be > 0")
        if not self.rel_dis > 0:
            raise ConfigError("rel_dis must be > 0")


@dataclass
class BoundaryAnnotation:
    sets: list[list[float]]
    video_length_seconds: float


@dataclass
class DetectionSet:
    timestamps: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class Window:
    start: int
    stop: int  # exclusive
    center: int  # frame index
    center_time: float
    positive: bool


def label_windows(num_frames: int, fps: float, boundaries, cfg: WindowConfig) -> list[Window]:
    """Enumerate windows over the whole video and label them."""
    cfg.validate()
    if not fps > 0:
        raise ConfigError(f"fps must be > 0, got {fps}")
    if num_frames < cfg.window_frames:
        return []
    starts = np.arange(0, num_frames - cfg.window_frames + 1, cfg.window_stride)
    centers = starts + cfg.center_offset
    times = centers / fps
    b = np.asarray(sorted(boundaries), dtype=np.float64)
    if b.size:
        dist = np.min(np.abs(times[:, None] - b[None, :]), axis=1)
        positive = dist < cfg.positive_radius_seconds
    else:
        positive = np.zeros(times.shape, dtype=bool)
    return [
        Window(int(s), int(s) + cfg.window_frames, int(c), float(t), bool(p))
        for s, c, t, p in zip(starts, centers, times, positive)
    ]


def window_features(features: np.ndarray, windows: list[Window],
                    pairing: str = "concat") -> np.ndarray:
    """Per window: [mean over [start, center), mean over [center, stop)].

    ``features`` is the ``(N, h)`` backbone output of the whole video.
    ``pairing="concat_absdiff"`` additionally appends ``|after - before|``.
    """
    if not windows:
        return np.zeros((0, 2 * features.shape[1]))
    csum = np.vstack([np.zeros((1, features.shape[1])), np.cumsum(features, axis=0)])
    rows = []
    for w in windows:
        before = (csum[w.center] - csum[w.start]) / max(w.center - w.start, 1)
        after = (csum[w.stop] - csum[w.center]) / (w.stop - w.center)
        if w.center == w.start:
            before = after
        parts = [before, after]
        if pairing == "concat_absdiff":
            parts.append(np.abs(after - before))
        elif pairing != "concat":
            raise ConfigError(f"unknown pairing {pairing!r}")
        rows.append(np.concatenate(parts))
    return np.stack(rows)


def balanced_batches(labels: np.ndarray, batch: int, rng: np.random.Generator):
    """Yield index batches with equal numbers of positives and negatives.

    One pass covers the majority class once; the minority class is resampled
    cyclically.  When only one class is present the batches are plain.
    """
    labels = np.asarray(labels, dtype=bool)
    pos = rng.permutation(np.flatnonzero(labels))
    neg = rng.permutation(np.flatnonzero(~labels))
    if pos.size == 0 or neg.size == 0:
        order = rng.permutation(labels.size)
        for lo in range(0, order.size, batch):
            yield order[lo:lo + batch]
        return
    half = max(batch // 2, 1)
    major, minor = (pos, neg) if pos.size >= neg.size else (neg, pos)
    n_batches = int(np.ceil(major.size / half))
    minor_cycle = np.resize(minor, n_batches * half)
    for k in range(n_batches):
        a = major[k * half:(k + 1) * half]
        b = minor_cycle[k * half:k * half + a.size]
        yield np.concatenate([a, b])


@dataclass
class BoundaryHead:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray
    pairing: str = "concat"
    threshold: float = 0.5

    def probability(self, X: np.ndarray) -> np.ndarray:
        z = ((X - self.mean) / self.scale) @ self.weights + self.bias
        return 1.0 / (1.0 + np.exp(-z))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.probability(X) >= self.threshold


def _video_windows(encoder: Encoder, video, cfg: WindowConfig, pairing: str, boundaries=None):
    windows = label_windows(video.num_frames, video.fps,
                            video.boundaries if boundaries is None else boundaries, cfg)
    feats = encoder.forward_backbone(video.frames).values
    return windows, window_features(feats, windows, pairing)


def collect_windows(encoder: Encoder, videos, cfg: WindowConfig, pairing: str = "concat"):
    """Stack window features and labels of several videos."""
    results = parallel_map(lambda v: _video_windows(encoder, v, cfg, pairing), videos)
    X = [x for _, x in results if len(x)]
    y = [np.array([w.positive for w in ws]) for ws, _ in results if ws]
    if not X:
        return np.zeros((0, 2)), np.zeros(0, dtype=bool)
    return np.vstack(X), np.concatenate(y)


def train_boundary_head(X: np.ndarray, y: np.ndarray, epochs: int = 30, lr: float = 0.1,
                        batch: int = 64, seed=0, weight_decay: float = 1e-4,
                        pairing: str = "concat") -> BoundaryHead:
    """Logistic regression on window features with class-balanced batches."""
    y = np.asarray(y, dtype=bool)
    if y.size == 0 or y.all() or not y.any():
        raise ProbeError("boundary head needs both positive and negative windows")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    Xs = (X - mean) / scale
    rng = np.random.default_rng([seed, 11])
    w = rng.normal(0.0, 0.01, size=X.shape[1])
    b = 0.0
    target = y.astype(np.float64)
    for _ in range(epochs):
        for idx in balanced_batches(y, batch, rng):
            z = Xs[idx] @ w + b
            p = 1.0 / (1.0 + np.exp(-z))
            g = (p - target[idx]) / idx.size
            w -= lr * (Xs[idx].T @ g + weight_decay * w)
            b -= lr * float(g.sum())
    return BoundaryHead(w, b, mean, scale, pairing)


def merge_positive_runs(center_times, positive) -> list[float]:
    """Collapse every run of consecutive positive windows to its mean center time."""
    out, run = [], []
    for t, p in zip(center_times, positive):
        if p:
            run.append(t)
        elif run:
            out.append(float(np.mean(run)))
            run = []
    if run:
        out.append(float(np.mean(run)))
    return sorted(out)


def detect(head: BoundaryHead, encoder: Encoder, video, cfg: WindowConfig) -> DetectionSet:
    windows, X = _video_windows(encoder, video, cfg, head.pairing, boundaries=[])
    if not windows:
        return DetectionSet([])
    positive = head.predict(X)
    return DetectionSet(merge_positive_runs([w.center_time for w in windows], positive))


def _match_count(detections, gt, threshold: float) -> int:
    gt = sorted(gt)
    used = [False] * len(gt)
    tp = 0
    for d in sorted(detections):
        best, best_dist = -1, np.inf
        for j, g in enumerate(gt):
            dist = abs(d - g)
            if not used[j] and dist < threshold and dist < best_dist:
                best, best_dist = j, dist
        if best >= 0:
            used[best] = True
            tp += 1
    return tp


def prf(detections, gt, video_length: float, rel_dis: float) -> tuple[float, float, float]:
    if not len(detections) and not len(gt):
        return 1.0, 1.0, 1.0
    tp = _match_count(detections, gt, rel_dis * video_length)
    precision = tp / len(detections) if len(detections) else 0.0
    recall = tp / len(gt) if len(gt) else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def f1_score(detections, annotation: BoundaryAnnotation, rel_dis: float = 0.05) -> dict:
    """Best-matching annotation set by F1.

    Each detection, in ascending time order, claims the nearest still
    unmatched ground truth closer than ``rel_dis * video_length`` (ties go to
    the earlier ground truth).
    """
    if not rel_dis > 0:
        raise ConfigError(f"rel_dis must be > 0, got {rel_dis}")
    dets = detections.timestamps if isinstance(detections, DetectionSet) else list(detections)
    best = None
    for k, gt in enumerate(annotation.sets):
        p, r, f = prf(dets, gt, annotation.video_length_seconds, rel_dis)
        if best is None or f > best["f1"]:
            best = {"precision": p, "recall": r, "f1": f, "matched_set_index": k}
    if best is None:
        p, r, f = prf(dets, [], annotation.video_length_seconds, rel_dis)
        best = {"precision": p, "recall": r, "f1": f, "matched_set_index": -1}
    return best


def most_consistent_set(annotation: BoundaryAnnotation, rel_dis: float = 0.05) -> int:
    """Index of the annotation set with the highest mean F1 against the others."""
    sets = annotation.sets
    if len(sets) <= 1:
        return 0
    scores = []
    for i, s in enumerate(sets):
        others = [prf(s, t, annotation.video_length_seconds, rel_dis)[2]
                  for j, t in enumerate(sets) if j != i]
        scores.append(np.mean(others))
    return int(np.argmax(scores))


def evaluate_detector(head: BoundaryHead, encoder: Encoder, videos, cfg: WindowConfig) -> list[dict]:
    """Per-video detection scores against each video's own boundaries."""
    rows = []
    for vid, video in videos:
        dets = detect(head, encoder, video, cfg)
        ann = BoundaryAnnotation([list(video.boundaries)], video.duration)
        score = f1_score(dets, ann, cfg.rel_dis)
        rows.append({
            "video_id": int(vid),
            "f1": score["f1"],
            "precision": score["precision"],
            "recall": score["recall"],
            "num_detections": len(dets.timestamps),
        })
    return rows
