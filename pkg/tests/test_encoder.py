import numpy as np
import pytest

from teg.encoder import (
    Encoder,
    EncoderConfig,
    l2_normalize,
    l2_normalize_backward,
    load_checkpoint,
    save_checkpoint,
)
from teg.errors import CheckpointError, ContractError, NormalizationError, StateError


def tiny(**kw):
    base = dict(input_dim=5, frame_hidden=4, feature_dim=4, kernel_size=3,
                head_hidden=4, embed_dim=3)
    base.update(kw)
    return EncoderConfig(**base)


def test_kernel_one_single_frame_is_frame_perceptron():
    enc = Encoder(tiny(kernel_size=1), seed=3)
    x = np.random.default_rng(0).standard_normal((1, 5))
    p = enc.params
    expected = np.tanh(x @ p["frame_w"] + p["frame_b"]) @ p["conv_w"][0] + p["conv_b"]
    out = enc.forward_backbone(x).values
    assert out.shape == (1, 4)
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-14)


def test_identity_center_tap_reproduces_frame_features():
    cfg = tiny()
    enc = Encoder(cfg, seed=1)
    conv = np.zeros((3, 4, 4))
    conv[1] = np.eye(4)
    enc.params["conv_w"] = conv
    x = np.random.default_rng(1).standard_normal((2, 7, 5))
    out = enc.forward_backbone(x).values
    expected = np.tanh(x @ enc.params["frame_w"] + enc.params["frame_b"])
    np.testing.assert_allclose(out, expected, atol=1e-14)


def test_output_keeps_temporal_length():
    enc = Encoder(tiny(), seed=0)
    feats = enc.forward_backbone(np.zeros((3, 11, 5)))
    assert feats.values.shape == (3, 11, 4)


def test_projection_rows_are_unit_and_heads_differ():
    enc = Encoder(tiny(), seed=0)
    feats = enc.forward_backbone(np.random.default_rng(2).standard_normal((2, 6, 5)))
    a = enc.project("persistent", feats).values
    b = enc.project("fine", feats).values
    np.testing.assert_allclose(np.linalg.norm(a, axis=-1), 1.0, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(b, axis=-1), 1.0, atol=1e-9)
    assert not np.allclose(a, b)


def test_normalize_scale_invariance():
    x = np.random.default_rng(3).standard_normal((4, 6))
    np.testing.assert_allclose(l2_normalize(5.0 * x)[0], l2_normalize(x)[0], atol=1e-15)


def test_zero_row_raises_with_row_index():
    x = np.ones((3, 2))
    x[1] = 0.0
    with pytest.raises(NormalizationError) as info:
        l2_normalize(x)
    assert info.value.row == 1


def test_normalize_gradient_is_orthogonal_to_output():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((5, 3))
    unit, norms = l2_normalize(x)
    g = l2_normalize_backward(rng.standard_normal((5, 3)), unit, norms)
    np.testing.assert_allclose(np.sum(g * unit, axis=1), 0.0, atol=1e-12)


def _loss_and_grads(enc, x, w_p, w_f):
    feats = enc.forward_backbone(x)
    pp = enc.project("persistent", feats)
    pf = enc.project("fine", feats)
    loss = float(np.sum(pp.values * w_p) + np.sum(pf.values * w_f))
    grads = enc.backward(feats, {"persistent": (pp, w_p), "fine": (pf, w_f)})
    return loss, grads


def test_zero_upstream_gradient_gives_zero_grads():
    enc = Encoder(tiny(), seed=0)
    x = np.random.default_rng(5).standard_normal((2, 6, 5))
    _, grads = _loss_and_grads(enc, x, np.zeros((2, 6, 3)), np.zeros((2, 6, 3)))
    assert all(not np.any(g) for g in grads.values())


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(6)
    enc = Encoder(tiny(), seed=2)
    x = rng.standard_normal((2, 6, 5))
    w_p, w_f = rng.standard_normal((2, 6, 3)), rng.standard_normal((2, 6, 3))
    _, grads = _loss_and_grads(enc, x, w_p, w_f)
    h = 1e-5
    names = sorted(enc.params)
    for k in range(10):
        name = names[k % len(names)]
        arr = enc.params[name]
        idx = tuple(int(rng.integers(s)) for s in arr.shape)
        old = arr[idx]
        arr[idx] = old + h
        plus, _ = _loss_and_grads(enc, x, w_p, w_f)
        arr[idx] = old - h
        minus, _ = _loss_and_grads(enc, x, w_p, w_f)
        arr[idx] = old
        numeric = (plus - minus) / (2 * h)
        assert abs(numeric - grads[name][idx]) <= 1e-4 * max(abs(numeric), 1e-6), name


def test_backward_before_forward_raises():
    enc = Encoder(tiny(), seed=0)
    feats = enc.forward_backbone(np.zeros((4, 5)))
    feats._cache = None
    with pytest.raises(StateError):
        enc.backward(feats, {})


def test_receptive_field_is_half_kernel():
    enc = Encoder(tiny(kernel_size=5), seed=0)
    x = np.random.default_rng(7).standard_normal((20, 5))
    base = enc.forward_backbone(x).values
    y = x.copy()
    y[10] += 1.0
    changed = np.flatnonzero(np.any(enc.forward_backbone(y).values != base, axis=1))
    assert changed.tolist() == [8, 9, 10, 11, 12]


def test_bad_input_shape_and_values():
    enc = Encoder(tiny(), seed=0)
    with pytest.raises(ContractError):
        enc.forward_backbone(np.zeros((4, 3)))
    bad = np.zeros((4, 5))
    bad[2, 1] = np.nan
    with pytest.raises(ContractError):
        enc.forward_backbone(bad)


def test_same_seed_same_params():
    a, b = Encoder(tiny(), seed=9), Encoder(tiny(), seed=9)
    assert a.checksum() == b.checksum()
    assert a.checksum() != Encoder(tiny(), seed=10).checksum()


def test_checkpoint_round_trip(tmp_path):
    enc = Encoder(tiny(), seed=4)
    path = tmp_path / "enc.npz"
    save_checkpoint(path, enc, extra={"note": "x"}, arrays={"v": np.arange(3.0)})
    back, extra, arrays = load_checkpoint(path)
    assert back.checksum() == enc.checksum()
    assert back.cfg == enc.cfg
    assert extra == {"note": "x"}
    np.testing.assert_array_equal(arrays["v"], np.arange(3.0))


def test_checkpoint_shape_mismatch(tmp_path):
    enc = Encoder(tiny(), seed=4)
    enc.params["conv_b"] = np.zeros(7)
    path = tmp_path / "bad.npz"
    save_checkpoint(path, enc)
    with pytest.raises(CheckpointError, match="conv_b"):
        load_checkpoint(path)
