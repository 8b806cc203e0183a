import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from teg.errors import SamplingError
from teg.sampling import ClipSpec, SamplingMode, frame_indices, sample_clip_pair


def test_frame_indices_examples():
    np.testing.assert_array_equal(frame_indices(ClipSpec(40, 16, 2)), np.arange(40, 71, 2))
    np.testing.assert_array_equal(frame_indices(ClipSpec(0, 3, 1)), [0, 1, 2])
    assert frame_indices(ClipSpec(0, 32, 4))[-1] == 0 + 31 * 4


@given(st.integers(0, 500), st.integers(1, 64), st.integers(1, 8))
def test_frame_indices_constant_gap(start, t, stride):
    idx = frame_indices(ClipSpec(start, t, stride))
    assert idx.size == t and idx[0] == start
    assert np.all(np.diff(idx) == stride)


def test_full_span_forces_start_zero():
    for seed in range(20):
        pair = sample_clip_pair(125, "long-short-contained", 32, 4, 16, 2, seed)
        assert pair.long.start_frame == 0


def test_contained_holds_over_many_draws():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        pair = sample_clip_pair(300, SamplingMode.LONG_SHORT_CONTAINED, 32, 4, 16, 2, rng)
        assert pair.long.contains(pair.short)
        assert pair.long.fits(300) and pair.short.fits(300)


def test_short_short_modes_use_short_geometry():
    rng = np.random.default_rng(1)
    for mode in (SamplingMode.SHORT_SHORT_RANDOM, SamplingMode.SHORT_SHORT_CONTAINED):
        pair = sample_clip_pair(300, mode, 32, 4, 16, 2, rng)
        assert pair.long.num_frames == pair.short.num_frames == 16
        assert pair.long.stride == pair.short.stride == 2


def test_short_short_contained_is_the_same_clip():
    rng = np.random.default_rng(2)
    for _ in range(100):
        pair = sample_clip_pair(300, SamplingMode.SHORT_SHORT_CONTAINED, 32, 4, 16, 2, rng)
        assert pair.long == pair.short


def test_random_mode_is_not_always_contained():
    rng = np.random.default_rng(3)
    pairs = [sample_clip_pair(300, SamplingMode.LONG_SHORT_RANDOM, 32, 4, 16, 2, rng)
             for _ in range(500)]
    assert any(not p.long.contains(p.short) for p in pairs)
    assert all(p.long.fits(300) and p.short.fits(300) for p in pairs)


def test_contained_pairs_cover_every_valid_position():
    # N=20, long span 10 (T=10, stride 1), short span 4: 11 * 7 valid pairs
    rng = np.random.default_rng(4)
    counts = {}
    draws = 20_000
    for _ in range(draws):
        p = sample_clip_pair(20, "long-short-contained", 10, 1, 4, 1, rng)
        key = (p.long.start_frame, p.short.start_frame - p.long.start_frame)
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 11 * 7
    # two-stage uniform: every pair has probability 1/77
    observed = np.array(list(counts.values()))
    expected = draws / 77
    chi2 = np.sum((observed - expected) ** 2 / expected)
    assert chi2 < 130  # 76 dof, p ~ 1e-4


def test_seed_reproducible():
    a = sample_clip_pair(300, "long-short-contained", 32, 4, 16, 2, 9)
    b = sample_clip_pair(300, "long-short-contained", 32, 4, 16, 2, 9)
    assert a == b


def test_video_too_short():
    with pytest.raises(SamplingError):
        sample_clip_pair(100, "long-short-contained", 32, 4, 16, 2, 0)


def test_contained_short_longer_than_long():
    with pytest.raises(SamplingError):
        sample_clip_pair(300, "long-short-contained", 4, 1, 16, 2, 0)


def test_invalid_clip_spec():
    with pytest.raises(SamplingError):
        ClipSpec(-1, 4, 1)
    with pytest.raises(SamplingError):
        ClipSpec(0, 4, 0)


@settings(max_examples=200)
@given(st.integers(1, 400), st.integers(1, 20), st.integers(1, 5), st.integers(1, 20),
       st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_pairs_always_valid(n, lt, ls, st_, ss, seed):
    long_span, short_span = (lt - 1) * ls + 1, (st_ - 1) * ss + 1
    if long_span > n or short_span > n or short_span > long_span:
        return
    pair = sample_clip_pair(n, "long-short-contained", lt, ls, st_, ss, seed)
    assert pair.long.contains(pair.short) and pair.long.fits(n)
