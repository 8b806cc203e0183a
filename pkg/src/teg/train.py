"""Self-supervised pretraining: batches of clip pairs, SGD with momentum,
linear warmup followed by half-period cosine decay."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, augment
from .encoder import Encoder, EncoderConfig, load_checkpoint, save_checkpoint
from .errors import CheckpointError, ConfigError, TrainingError
from .losses import (
    AggregationConfig,
    LossConfig,
    aggregate,
    aggregate_backward,
    batch_contrastive_loss,
    match_correspondence,
)
from .sampling import SamplingMode, frame_indices, sample_clip_pair

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 30
    base_lr: float | None = None  # None: 0.32 * B / 1024
    warmup_epochs: float = 5.0
    momentum: float = 0.9
    mode: SamplingMode = SamplingMode.LONG_SHORT_CONTAINED
    long_T: int = 32
    long_stride: int = 4
    short_T: int = 16
    short_stride: int = 2
    loss: LossConfig = field(default_factory=LossConfig)
    aug_sigma: float = 0.1
    seed: int = 0

    @property
    def lr(self) -> float:
        return 0.32 * self.batch_size / 1024 if self.base_lr is None else self.base_lr

    def clip_lengths(self) -> tuple[int, int]:
        """(T of the first clip, T of the second clip) after the mode is applied."""
        mode = SamplingMode(self.mode)
        return (self.short_T if mode.symmetric else self.long_T), self.short_T

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ConfigError(f"warmup_epochs must lie in [0, epochs], got {self.warmup_epochs}")
        if not self.lr > 0:
            raise ConfigError(f"base_lr must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.aug_sigma < 0:
            raise ConfigError(f"aug_sigma must be >= 0, got {self.aug_sigma}")
        SamplingMode(self.mode)
        self.loss.validate()
        long_T, short_T = self.clip_lengths()
        self.loss.agg.validate(short_T=short_T, long_T=long_T)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mode"] = SamplingMode(self.mode).value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        loss = dict(d.pop("loss", {}))
        agg = AggregationConfig(**loss.pop("agg", {}))
        return cls(loss=LossConfig(agg=agg, **loss), **{
            **d, "mode": SamplingMode(d.get("mode", SamplingMode.LONG_SHORT_CONTAINED))})


def lr_at(step: float, total_steps: float, warmup_steps: float, base_lr: float) -> float:
    if step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    if total_steps <= warmup_steps:
        return base_lr
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             velocity: dict[str, np.ndarray], lr: float, momentum: float,
             step: int = -1) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Classical momentum: ``v <- mu v + g``; ``theta <- theta - lr v``."""
    for name in params:
        if not np.all(np.isfinite(grads[name])):
            raise TrainingError(step, f"non-finite gradient for {name}")
    new_v = {k: momentum * velocity[k] + grads[k] for k in params}
    new_p = {k: params[k] - lr * new_v[k] for k in params}
    return new_p, new_v


def compute_loss_and_grads(encoder: Encoder, long_frames: np.ndarray, short_frames: np.ndarray,
                           long_index: np.ndarray, short_index: np.ndarray,
                           loss_cfg: LossConfig, want_input_grads: bool = False) -> dict:
    """Evaluate the weighted objective on one batch and backpropagate.

    Frames are ``(B, T, d)``, indices ``(B, T)`` original-video frame indices.
    Returns a dict with ``L``, ``L_f``, ``L_p``, ``grads`` and the matches.
    """
    alpha, tau = loss_cfg.alpha, loss_cfg.tau
    agg = loss_cfg.agg
    f_long = encoder.forward_backbone(long_frames)
    f_short = encoder.forward_backbone(short_frames)

    heads = {}
    for head, (n_groups, m_groups) in (("persistent", (1, 1)), ("fine", (agg.n, agg.m))):
        p_s = encoder.project(head, f_short)
        p_l = encoder.project(head, f_long)
        b_s = aggregate(p_s.values, short_index, n_groups, "short", head)
        b_l = aggregate(p_l.values, long_index, m_groups, "long", head)
        match = match_correspondence(b_s, b_l)
        value, g_s, g_l = batch_contrastive_loss(b_s.embeddings, b_l.embeddings, match, tau)
        heads[head] = (value, p_s, p_l, b_s, b_l, g_s, g_l, match)

    weights = {"fine": alpha, "persistent": 1.0 - alpha}
    grads = encoder.zero_grads()
    short_proj, long_proj = {}, {}
    for head, (_, p_s, p_l, b_s, b_l, g_s, g_l, _) in heads.items():
        w = weights[head]
        if w == 0.0:
            continue
        short_proj[head] = (p_s, aggregate_backward(w * g_s, b_s))
        long_proj[head] = (p_l, aggregate_backward(w * g_l, b_l))
    encoder.backward(f_long, long_proj, grads=grads)
    d_long = grads.pop("frames")
    encoder.backward(f_short, short_proj, grads=grads)
    d_short = grads.pop("frames")

    L_f, L_p = heads["fine"][0], heads["persistent"][0]
    out = {
        "L": alpha * L_f + (1.0 - alpha) * L_p,
        "L_f": L_f,
        "L_p": L_p,
        "grads": grads,
        "match": heads["fine"][7],
    }
    if want_input_grads:
        out["grad_long_frames"] = d_long
        out["grad_short_frames"] = d_short
    return out


class Trainer:
    """Stateful pretraining loop; the state is (params, velocity, step).

    All randomness for step ``s`` derives from ``(seed, s)`` and the epoch
    permutation from ``(seed, epoch)``, so a run resumed from a checkpoint
    continues exactly as the uninterrupted one.
    """

    def __init__(self, dataset: Dataset, cfg: TrainConfig, encoder: Encoder | None = None,
                 encoder_cfg: EncoderConfig | None = None):
        cfg.validate()
        if len(dataset) == 0:
            raise ConfigError("dataset is empty")
        if cfg.batch_size > len(dataset):
            raise ConfigError(
                f"batch_size {cfg.batch_size} exceeds dataset size {len(dataset)}"
            )
        self.dataset = dataset
        self.cfg = cfg
        if encoder is None:
            encoder_cfg = encoder_cfg or EncoderConfig(input_dim=dataset.config.feature_dim)
            encoder = Encoder(encoder_cfg, seed=cfg.seed)
        self.encoder = encoder
        self.velocity = {k: np.zeros_like(v) for k, v in encoder.params.items()}
        self.step = 0

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.dataset) / self.cfg.batch_size)

    @property
    def total_steps(self) -> int:
        return self.cfg.epochs * self.steps_per_epoch

    @property
    def warmup_steps(self) -> float:
        return self.cfg.warmup_epochs * self.steps_per_epoch

    def epoch_order(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.cfg.seed, 1, epoch]).permutation(len(self.dataset))

    def batch_indices(self, step: int) -> np.ndarray:
        epoch, b = divmod(step, self.steps_per_epoch)
        B = self.cfg.batch_size
        return self.epoch_order(epoch)[b * B:(b + 1) * B]

    def make_batch(self, step: int):
        cfg = self.cfg
        rng = np.random.default_rng([cfg.seed, 2, step])
        long_frames, short_frames, long_idx, short_idx = [], [], [], []
        for vid in self.batch_indices(step):
            video = self.dataset[int(vid)]
            pair = sample_clip_pair(video.num_frames, cfg.mode, cfg.long_T, cfg.long_stride,
                                    cfg.short_T, cfg.short_stride, rng)
            li, si = frame_indices(pair.long), frame_indices(pair.short)
            long_frames.append(augment(video.frames[li], cfg.aug_sigma, rng))
            short_frames.append(augment(video.frames[si], cfg.aug_sigma, rng))
            long_idx.append(li)
            short_idx.append(si)
        return (np.stack(long_frames), np.stack(short_frames),
                np.stack(long_idx), np.stack(short_idx))

    def train_step(self) -> dict:
        step = self.step
        long_frames, short_frames, long_idx, short_idx = self.make_batch(step)
        out = compute_loss_and_grads(self.encoder, long_frames, short_frames,
                                     long_idx, short_idx, self.cfg.loss)
        for key in ("L", "L_f", "L_p"):
            if not math.isfinite(out[key]):
                raise TrainingError(step, f"non-finite loss {key}={out[key]}")
        lr = lr_at(step, self.total_steps, self.warmup_steps, self.cfg.lr)
        self.encoder.params, self.velocity = sgd_step(
            self.encoder.params, out["grads"], self.velocity, lr, self.cfg.momentum, step)
        self.step += 1
        return {
            "step": step,
            "epoch": step // self.steps_per_epoch,
            "lr": lr,
            "L": out["L"],
            "L_f": out["L_f"],
            "L_p": out["L_p"],
        }

    def run(self, until_step: int | None = None, metrics_path: str | Path | None = None):
        """Train up to ``until_step`` (default: the end) and return the metrics."""
        until = self.total_steps if until_step is None else min(until_step, self.total_steps)
        metrics = []
        fh = open(metrics_path, "a", encoding="utf-8") if metrics_path else None
        try:
            while self.step < until:
                row = self.train_step()
                metrics.append(row)
                if fh:
                    fh.write(json.dumps(row) + "\n")
                if row["step"] % self.steps_per_epoch == 0:
                    log.debug("epoch %d step %d L=%.4f L_f=%.4f L_p=%.4f", row["epoch"],
                              row["step"], row["L"], row["L_f"], row["L_p"])
        finally:
            if fh:
                fh.close()
        return metrics

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta = {"step": self.step, "train": self.cfg.to_dict(), **(extra or {})}
        save_checkpoint(path, self.encoder, extra=meta,
                        arrays={f"velocity/{k}": v for k, v in self.velocity.items()})

    @classmethod
    def resume(cls, path: str | Path, dataset: Dataset) -> "Trainer":
        encoder, meta, arrays = load_checkpoint(path)
        if "train" not in meta:
            raise CheckpointError(f"{path}: no training state recorded")
        trainer = cls(dataset, TrainConfig.from_dict(meta["train"]), encoder=encoder)
        velocity = {k[len("velocity/"):]: v for k, v in arrays.items()
                    if k.startswith("velocity/")}
        for name, value in encoder.params.items():
            if name not in velocity or velocity[name].shape != value.shape:
                raise CheckpointError(f"{path}: velocity for {name} missing or mis-shaped")
        trainer.velocity = velocity
        trainer.step = int(meta["step"])
        return trainer


def pretrain(dataset: Dataset, cfg: TrainConfig, encoder_cfg: EncoderConfig | None = None,
             checkpoint_path: str | Path | None = None,
             metrics_path: str | Path | None = None) -> tuple[Encoder, list[dict]]:
    trainer = Trainer(dataset, cfg, encoder_cfg=encoder_cfg)
    if metrics_path:
        Path(metrics_path).write_text("", encoding="utf-8")
    metrics = trainer.run(metrics_path=metrics_path)
    if checkpoint_path:
        trainer.save(checkpoint_path)
    return trainer.encoder, metrics
