"""The standard synthetic benchmark: pretrain, then probe, detect and compare.

One benchmark run is fully determined by a :class:`BenchmarkConfig` and a
seed.  The seed selects the dataset, the encoder initialization, the training
randomness and the probe splits alike.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .boundary import (
    WindowConfig,
    collect_windows,
    evaluate_detector,
    train_boundary_head,
)
from .data import Dataset, GeneratorConfig, generate_dataset
from .encoder import Encoder, EncoderConfig
from .losses import AggregationConfig, LossConfig
from .probes import ProbeConfig, cross_event_similarity, run_probe, split_by_video
from .sampling import SamplingMode
from .train import Trainer, TrainConfig


@dataclass(frozen=True)
class BoundaryTrainConfig:
    epochs: int = 30
    lr: float = 0.1
    batch: int = 64
    pairing: str = "concat_absdiff"
    train_fraction: float = 0.5


def standard_generator(seed: int = 0) -> GeneratorConfig:
    return GeneratorConfig(
        num_videos=200,
        frames_per_video=300,
        fps=30.0,
        feature_dim=32,
        num_event_classes=5,
        num_theme_classes=4,
        events_per_video=5,
        noise_sigma=1.5,
        min_segment_frames=20,
        seed=seed,
    )


@dataclass(frozen=True)
class BenchmarkConfig:
    generator: GeneratorConfig = field(default_factory=standard_generator)
    encoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(feature_dim=4))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(aug_sigma=0.1, epochs=120))
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    boundary: BoundaryTrainConfig = field(default_factory=BoundaryTrainConfig)
    similarity_videos: int = 50

    def with_seed(self, seed: int) -> "BenchmarkConfig":
        return dataclasses.replace(
            self,
            generator=dataclasses.replace(self.generator, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
            probe=dataclasses.replace(self.probe, seed=seed),
        )

    def with_loss(self, alpha: float | None = None, mode: SamplingMode | str | None = None,
                  n: int | None = None, m: int | None = None) -> "BenchmarkConfig":
        loss = self.train.loss
        agg = AggregationConfig(n=loss.agg.n if n is None else n,
                                m=loss.agg.m if m is None else m)
        loss = LossConfig(tau=loss.tau, alpha=loss.alpha if alpha is None else alpha, agg=agg)
        train = dataclasses.replace(self.train, loss=loss,
                                    mode=self.train.mode if mode is None else SamplingMode(mode))
        return dataclasses.replace(self, train=train)


class Benchmark:
    """Caches datasets and pretrained encoders across evaluations."""

    def __init__(self, cfg: BenchmarkConfig | None = None):
        self.cfg = cfg or BenchmarkConfig()
        self._datasets: dict[GeneratorConfig, Dataset] = {}
        self._encoders: dict[tuple, tuple[Encoder, list[dict]]] = {}

    def dataset(self, seed: int) -> Dataset:
        gen = dataclasses.replace(self.cfg.generator, seed=seed)
        if gen not in self._datasets:
            self._datasets[gen] = generate_dataset(gen)
        return self._datasets[gen]

    def encoder_config(self) -> EncoderConfig:
        return dataclasses.replace(self.cfg.encoder, input_dim=self.cfg.generator.feature_dim)

    def pretrain(self, seed: int, alpha: float | None = None, mode=None, n=None, m=None):
        """Encoder pretrained with the given loss overrides, and its metrics."""
        cfg = self.cfg.with_seed(seed).with_loss(alpha, mode, n, m)
        key = (cfg.generator, cfg.train, self.encoder_config())
        if key not in self._encoders:
            trainer = Trainer(self.dataset(seed), cfg.train, encoder_cfg=self.encoder_config())
            metrics = trainer.run()
            self._encoders[key] = (trainer.encoder, metrics)
        return self._encoders[key]

    def probe_accuracy(self, encoder: Encoder, seed: int, task: str) -> float:
        cfg = dataclasses.replace(self.cfg.probe, task=task, seed=seed)
        return run_probe(encoder, self.dataset(seed), cfg).accuracy

    def boundary_f1(self, encoder: Encoder, seed: int) -> dict:
        ds = self.dataset(seed)
        bcfg = self.cfg.boundary
        train_mask, _ = split_by_video(np.arange(len(ds)), bcfg.train_fraction, [seed, 5])
        train = [ds[i] for i in np.flatnonzero(train_mask)]
        test = [(int(i), ds[i]) for i in np.flatnonzero(~train_mask)]
        X, y = collect_windows(encoder, train, self.cfg.window, bcfg.pairing)
        head = train_boundary_head(X, y, epochs=bcfg.epochs, lr=bcfg.lr, batch=bcfg.batch,
                                   seed=seed, pairing=bcfg.pairing)
        rows = evaluate_detector(head, encoder, test, self.cfg.window)
        return {
            "f1": float(np.mean([r["f1"] for r in rows])),
            "precision": float(np.mean([r["precision"] for r in rows])),
            "recall": float(np.mean([r["recall"] for r in rows])),
            "per_video": rows,
        }

    def similarity(self, encoder: Encoder, seed: int) -> float:
        ds = self.dataset(seed)
        return cross_event_similarity(encoder, ds.samples[: self.cfg.similarity_videos])

    # -- sweeps ----------------------------------------------------------

    def alpha_sweep(self, alphas, seeds) -> list[dict]:
        rows = []
        for seed in seeds:
            for alpha in alphas:
                enc, _ = self.pretrain(seed, alpha=alpha)
                rows.append({
                    "alpha": float(alpha),
                    "seed": int(seed),
                    "event_acc": self.probe_accuracy(enc, seed, "event"),
                    "sequence_acc": self.probe_accuracy(enc, seed, "sequence"),
                })
        return rows

    def sampling_sweep(self, seeds, modes=tuple(SamplingMode)) -> list[dict]:
        rows = []
        for seed in seeds:
            for mode in modes:
                enc, _ = self.pretrain(seed, mode=mode)
                rows.append({
                    "mode": SamplingMode(mode).value,
                    "seed": int(seed),
                    "event_acc": self.probe_accuracy(enc, seed, "event"),
                })
        return rows

    def nm_sweep(self, grid, seeds) -> list[dict]:
        rows = []
        for seed in seeds:
            for n, m in grid:
                enc, _ = self.pretrain(seed, n=n, m=m)
                rows.append({
                    "n": int(n),
                    "m": int(m),
                    "seed": int(seed),
                    "event_acc": self.probe_accuracy(enc, seed, "event"),
                })
        return rows
