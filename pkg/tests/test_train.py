import math

import numpy as np
import pytest

from teg.data import GeneratorConfig, generate_dataset
from teg.encoder import EncoderConfig
from teg.errors import ConfigError, TrainingError
from teg.gradcheck import random_problem
from teg.losses import AggregationConfig, LossConfig
from teg.train import Trainer, TrainConfig, compute_loss_and_grads, lr_at, sgd_step


@pytest.fixture(scope="module")
def small_dataset():
    return generate_dataset(GeneratorConfig(num_videos=12, frames_per_video=160, feature_dim=8,
                                            min_segment_frames=16, seed=3))


SMALL_ENC = EncoderConfig(input_dim=8, frame_hidden=6, feature_dim=6, head_hidden=6, embed_dim=4)


def test_lr_schedule_examples():
    assert lr_at(0, 100, 10, 1.0) == pytest.approx(0.1)
    assert lr_at(9, 100, 10, 1.0) == pytest.approx(1.0)
    assert lr_at(10, 100, 10, 1.0) == pytest.approx(1.0)
    assert lr_at(55, 100, 10, 1.0) == pytest.approx(0.5)
    assert lr_at(100, 100, 10, 1.0) == pytest.approx(0.0, abs=1e-15)
    assert lr_at(5, 100, 0, 2.0) == pytest.approx(2.0 * 0.5 * (1 + math.cos(math.pi * 0.05)))


def test_default_lr_is_linear_in_batch():
    assert TrainConfig(batch_size=1024).lr == pytest.approx(0.32)
    assert TrainConfig(batch_size=32).lr == pytest.approx(0.01)


def test_momentum_accumulates():
    p = {"w": np.array([1.0])}
    v = {"w": np.array([0.0])}
    g = {"w": np.array([1.0])}
    p, v = sgd_step(p, g, v, lr=1.0, momentum=0.9)
    assert v["w"][0] == 1.0 and p["w"][0] == 0.0
    p, v = sgd_step(p, g, v, lr=1.0, momentum=0.9)
    assert v["w"][0] == pytest.approx(1.9)
    p, v = sgd_step(p, g, v, lr=1.0, momentum=0.9)
    assert v["w"][0] == pytest.approx(2.71)


def test_non_finite_gradient_raises():
    p = {"w": np.zeros(2)}
    with pytest.raises(TrainingError) as info:
        sgd_step(p, {"w": np.array([0.0, np.inf])}, {"w": np.zeros(2)}, 0.1, 0.9, step=7)
    assert info.value.step == 7


def test_alpha_zero_leaves_fine_head_untouched():
    enc, (lf, sf, li, si), _ = random_problem(0)
    loss = LossConfig(tau=0.5, alpha=0.0, agg=AggregationConfig(n=2, m=4))
    grads = compute_loss_and_grads(enc, lf, sf, li, si, loss)["grads"]
    assert all(not np.any(grads[k]) for k in grads if k.startswith("fine_"))
    assert any(np.any(grads[k]) for k in grads if k.startswith("persistent_"))


def test_alpha_one_leaves_persistent_head_untouched():
    enc, (lf, sf, li, si), _ = random_problem(1)
    loss = LossConfig(tau=0.5, alpha=1.0, agg=AggregationConfig(n=2, m=4))
    grads = compute_loss_and_grads(enc, lf, sf, li, si, loss)["grads"]
    assert all(not np.any(grads[k]) for k in grads if k.startswith("persistent_"))


def test_training_is_deterministic(small_dataset):
    cfg = TrainConfig(batch_size=4, epochs=2, warmup_epochs=1, seed=5)
    a = Trainer(small_dataset, cfg, encoder_cfg=SMALL_ENC)
    b = Trainer(small_dataset, cfg, encoder_cfg=SMALL_ENC)
    assert a.run() == b.run()
    assert a.encoder.checksum() == b.encoder.checksum()


def test_each_epoch_visits_every_video_once(small_dataset):
    trainer = Trainer(small_dataset, TrainConfig(batch_size=5, epochs=2, warmup_epochs=1),
                      encoder_cfg=SMALL_ENC)
    assert trainer.steps_per_epoch == 3
    seen = np.concatenate([trainer.batch_indices(s) for s in range(3)])
    assert sorted(seen.tolist()) == list(range(12))
    assert not np.array_equal(trainer.epoch_order(0), trainer.epoch_order(1))


def test_resume_is_bit_exact(small_dataset, tmp_path):
    cfg = TrainConfig(batch_size=4, epochs=2, warmup_epochs=1, seed=2)
    full = Trainer(small_dataset, cfg, encoder_cfg=SMALL_ENC)
    full.run(until_step=3)
    path = tmp_path / "ckpt.npz"
    full.save(path)
    full.run(until_step=4)
    resumed = Trainer.resume(path, small_dataset)
    assert resumed.step == 3
    resumed.run(until_step=4)
    assert resumed.encoder.checksum() == full.encoder.checksum()
    for k in full.velocity:
        assert resumed.velocity[k].tobytes() == full.velocity[k].tobytes()


def test_batch_larger_than_dataset(small_dataset):
    with pytest.raises(ConfigError, match="exceeds"):
        Trainer(small_dataset, TrainConfig(batch_size=13), encoder_cfg=SMALL_ENC)


@pytest.mark.parametrize("kw", [dict(epochs=0), dict(momentum=1.0), dict(base_lr=-1.0),
                                dict(warmup_epochs=40), dict(long_T=30)])
def test_config_errors(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw).validate()


def test_loss_decreases_on_standard_size_dataset():
    ds = generate_dataset(GeneratorConfig(num_videos=200, seed=0))
    trainer = Trainer(ds, TrainConfig(epochs=30), encoder_cfg=EncoderConfig())
    metrics = trainer.run()
    per_epoch = trainer.steps_per_epoch
    first = np.mean([r["L"] for r in metrics[:per_epoch]])
    last = np.mean([r["L"] for r in metrics[-per_epoch:]])
    assert last < first
