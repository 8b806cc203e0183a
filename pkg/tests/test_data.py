import numpy as np
import pytest

from teg.data import (
    GeneratorConfig,
    augment,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from teg.errors import ConfigError


def small_cfg(**kw):
    base = dict(num_videos=6, frames_per_video=120, feature_dim=8, noise_sigma=0.2,
                min_segment_frames=10, seed=7)
    base.update(kw)
    return GeneratorConfig(**base)


def test_same_seed_is_bit_identical():
    a = generate_dataset(small_cfg())
    b = generate_dataset(small_cfg())
    for x, y in zip(a, b):
        assert x.frames.tobytes() == y.frames.tobytes()
        assert np.array_equal(x.event_labels, y.event_labels)
        assert x.theme_label == y.theme_label and x.boundaries == y.boundaries


def test_different_seed_differs():
    a = generate_dataset(small_cfg(seed=1))
    b = generate_dataset(small_cfg(seed=2))
    assert not np.array_equal(a[0].frames, b[0].frames)


def test_single_event_has_no_boundaries():
    ds = generate_dataset(small_cfg(events_per_video=1))
    assert all(s.boundaries == [] for s in ds)
    assert all(np.unique(s.event_labels).size == 1 for s in ds)


def test_segments_over_many_seeds():
    for seed in range(100):
        cfg = GeneratorConfig(num_videos=2, frames_per_video=300, events_per_video=5,
                              min_segment_frames=20, feature_dim=4, seed=seed)
        for s in generate_dataset(cfg):
            assert len(s.boundaries) == 4
            lengths = [b - a for a, b, _ in s.segments()]
            assert len(lengths) == 5 and min(lengths) >= 20 and sum(lengths) == 300
            changes = np.count_nonzero(np.diff(s.event_labels))
            assert changes == len(s.boundaries)
            assert all(0 < t < s.duration for t in s.boundaries)
            assert all(a < b for a, b in zip(s.boundaries, s.boundaries[1:]))


def test_tight_partition_is_forced():
    cfg = small_cfg(frames_per_video=50, events_per_video=5, min_segment_frames=10)
    for s in generate_dataset(cfg):
        assert [b - a for a, b, _ in s.segments()] == [10] * 5


def test_frame_model_without_noise():
    ds = generate_dataset(small_cfg(noise_sigma=0.0))
    for s in ds:
        expected = ds.theme_prototypes[s.theme_label] + ds.event_prototypes[s.event_labels]
        np.testing.assert_array_equal(s.frames, expected)


def test_prototypes_have_unit_expected_norm():
    cfg = GeneratorConfig(num_videos=1, feature_dim=64, num_event_classes=400,
                          num_theme_classes=400, seed=3)
    ds = generate_dataset(cfg)
    sq = np.concatenate([np.sum(ds.theme_prototypes**2, 1), np.sum(ds.event_prototypes**2, 1)])
    assert abs(sq.mean() - 1.0) < 0.03


def test_theme_separability_oracle():
    # nearest theme prototype to the plain video mean, default 32-dim features
    for seed in range(5):
        ds = generate_dataset(GeneratorConfig(noise_sigma=0.0, seed=seed))
        for s in ds:
            dist = np.linalg.norm(ds.theme_prototypes - s.frames.mean(0), axis=1)
            assert dist.argmin() == s.theme_label


def test_event_separability_oracle():
    ds = generate_dataset(small_cfg(noise_sigma=0.0, num_videos=20))
    combos = ds.theme_prototypes[:, None, :] + ds.event_prototypes[None, :, :]
    for s in ds:
        for a, b, label in s.segments():
            mean = s.frames[a:b].mean(0)
            dist = np.linalg.norm(combos - mean, axis=-1)
            theme, event = np.unravel_index(dist.argmin(), dist.shape)
            assert (theme, event) == (s.theme_label, label)


@pytest.mark.parametrize(
    "kw, match",
    [
        (dict(events_per_video=0), "events_per_video"),
        (dict(events_per_video=13, min_segment_frames=10), "min_segment_frames"),
        (dict(fps=0.0), "fps"),
        (dict(noise_sigma=-1.0), "noise_sigma"),
        (dict(num_event_classes=1, events_per_video=3), "num_event_classes"),
    ],
)
def test_invalid_config_names_the_bound(kw, match):
    with pytest.raises(ConfigError, match=match):
        generate_dataset(small_cfg(**kw))


def test_augment_zero_sigma_is_identity():
    x = np.random.default_rng(0).standard_normal((5, 3))
    out = augment(x, 0.0, seed=1)
    np.testing.assert_array_equal(out, x)
    assert out is not x


def test_augment_is_seeded_and_leaves_input():
    x = np.zeros((4, 4))
    a = augment(x, 0.5, seed=11)
    b = augment(x, 0.5, seed=11)
    np.testing.assert_array_equal(a, b)
    assert np.all(x == 0)


def test_augment_mean_abs_perturbation():
    sigma = 0.3
    x = np.ones((1000, 100))
    delta = augment(x, sigma, seed=5) - x
    expected = sigma * np.sqrt(2 / np.pi)
    assert abs(np.abs(delta).mean() - expected) / expected < 0.05


def test_dataset_roundtrip_is_lossless(tmp_path):
    ds = generate_dataset(small_cfg())
    path = tmp_path / "ds.npz"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.config == ds.config
    np.testing.assert_array_equal(back.theme_prototypes, ds.theme_prototypes)
    for a, b in zip(ds, back):
        assert a.frames.tobytes() == b.frames.tobytes()
        assert np.array_equal(a.event_labels, b.event_labels)
        assert a.boundaries == b.boundaries and a.theme_label == b.theme_label
        assert a.fps == b.fps
