import numpy as np
import pytest

from teg.data import GeneratorConfig, generate_dataset
from teg.encoder import Encoder, EncoderConfig
from teg.errors import ContractError, ProbeError
from teg.probes import (
    ProbeConfig,
    cross_event_similarity,
    extract_features,
    linear_probe,
    max_workers,
    parallel_map,
    run_probe,
    sequence_spans,
    similarity_matrix,
    split_by_video,
    uniform_spans,
)


@pytest.fixture(scope="module")
def encoder():
    return Encoder(EncoderConfig(input_dim=8, frame_hidden=8, feature_dim=8), seed=0)


@pytest.fixture(scope="module")
def dataset():
    return generate_dataset(GeneratorConfig(num_videos=20, frames_per_video=150, feature_dim=8,
                                            noise_sigma=0.1, min_segment_frames=15, seed=1))


def test_extract_features_is_span_mean(encoder, dataset):
    video = dataset[0]
    full = encoder.forward_backbone(video.frames).values
    np.testing.assert_allclose(extract_features(encoder, video, (0, 150)), full.mean(0),
                               atol=1e-14)
    # a lone frame sees its edge-replicated neighbours, not the video
    single = encoder.forward_backbone(video.frames[10:11]).values[0]
    np.testing.assert_allclose(extract_features(encoder, video, (10, 11)), single, atol=1e-14)


@pytest.mark.parametrize("span", [(5, 5), (-1, 3), (0, 151)])
def test_extract_features_rejects_bad_spans(encoder, dataset, span):
    with pytest.raises(ContractError):
        extract_features(encoder, dataset[0], span)


def test_separable_data_is_fit_exactly():
    rng = np.random.default_rng(0)
    centers = 5.0 * np.eye(3)
    y = np.repeat(np.arange(3), 30)
    X = centers[y] + 0.1 * rng.standard_normal((90, 3))
    res = linear_probe(X[::2], y[::2], X[1::2], y[1::2], ProbeConfig(epochs=50))
    assert res.train_accuracy == 1.0 and res.accuracy == 1.0


def test_shuffled_labels_are_near_chance():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((800, 4))
    y = rng.integers(0, 4, size=800)
    res = linear_probe(X[:400], y[:400], X[400:], y[400:], ProbeConfig(epochs=20))
    assert abs(res.accuracy - 0.25) < 0.10


def test_probe_is_reproducible_and_leaves_encoder_alone(encoder, dataset):
    before = encoder.checksum()
    a = run_probe(encoder, dataset, ProbeConfig(epochs=0))
    b = run_probe(encoder, dataset, ProbeConfig(epochs=0))
    assert a.accuracy == b.accuracy
    np.testing.assert_array_equal(a.weights, b.weights)
    run_probe(encoder, dataset, ProbeConfig(task="sequence", epochs=5))
    assert encoder.checksum() == before


def test_single_class_training_split_raises():
    X = np.zeros((4, 2))
    with pytest.raises(ProbeError):
        linear_probe(X, np.zeros(4, int), X, np.zeros(4, int), ProbeConfig())


def test_split_never_straddles_a_video():
    vids = np.repeat(np.arange(10), 3)
    train, test = split_by_video(vids, 0.5, 0)
    assert not set(vids[train]) & set(vids[test])
    assert len(set(vids[train])) == 5


def test_sequence_spans():
    assert sequence_spans(300, 32, 4) == [(0, 32), (89, 121), (179, 211), (268, 300)]
    assert sequence_spans(20, 32, 4) == [(0, 20)]
    assert sequence_spans(300, None, 4) == [(0, 300)]


def test_uniform_spans_tile_the_video():
    spans = uniform_spans(300, 5)
    assert spans == [(0, 60), (60, 120), (120, 180), (180, 240), (240, 300)]


def test_similarity_matrix_shape_diagonal_symmetry(encoder, dataset):
    sim = similarity_matrix(encoder, dataset[0])
    assert sim.shape == (5, 5)
    np.testing.assert_allclose(np.diag(sim), 1.0, atol=1e-12)
    np.testing.assert_array_equal(sim, sim.T)
    assert np.all(sim <= 1.0 + 1e-12) and np.all(sim >= -1.0 - 1e-12)


def test_cross_event_similarity_is_a_cosine(encoder, dataset):
    s = cross_event_similarity(encoder, dataset.samples[:5])
    assert -1.0 <= s <= 1.0


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("TEG_THREADS", "3")
    assert max_workers() == 3
    assert parallel_map(lambda x: x * x, range(6)) == [0, 1, 4, 9, 16, 25]
    monkeypatch.setenv("TEG_THREADS", "junk")
    assert max_workers() == 1
