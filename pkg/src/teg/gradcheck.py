"""Central finite-difference check of the full pretraining objective."""

from __future__ import annotations

import numpy as np

from .encoder import Encoder, EncoderConfig
from .losses import AggregationConfig, LossConfig
from .train import compute_loss_and_grads


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def random_problem(seed=0, batch: int = 4, long_T: int = 8, short_T: int = 4,
                   cfg: EncoderConfig | None = None,
                   loss: LossConfig | None = None):
    """A small random batch with temporally consistent frame indices."""
    rng = np.random.default_rng(seed)
    cfg = cfg or EncoderConfig(input_dim=6, frame_hidden=5, feature_dim=4, kernel_size=3,
                               head_hidden=5, embed_dim=3)
    loss = loss or LossConfig(tau=0.5, alpha=0.6, agg=AggregationConfig(n=2, m=4))
    encoder = Encoder(cfg, seed=[seed, 1])
    long_start = rng.integers(0, 10, size=batch)
    short_start = long_start + rng.integers(0, long_T, size=batch)
    long_idx = long_start[:, None] + 2 * np.arange(long_T)
    short_idx = short_start[:, None] + np.arange(short_T)
    long_frames = rng.standard_normal((batch, long_T, cfg.input_dim))
    short_frames = rng.standard_normal((batch, short_T, cfg.input_dim))
    return encoder, (long_frames, short_frames, long_idx, short_idx), loss


def gradient_check(num_coords: int = 50, seed=0, h: float = 1e-5,
                   include_inputs: bool = True) -> dict:
    """Compare analytic and central-difference gradients of the total loss.

    Coordinates are drawn at random over every parameter tensor (and the two
    input clips).  Returns the maximum relative error and per-coordinate rows.
    """
    encoder, (lf, sf, li, si), loss = random_problem(seed)
    out = compute_loss_and_grads(encoder, lf, sf, li, si, loss, want_input_grads=True)
    targets = dict(encoder.params)
    analytic = dict(out["grads"])
    if include_inputs:
        targets["long_frames"], analytic["long_frames"] = lf, out["grad_long_frames"]
        targets["short_frames"], analytic["short_frames"] = sf, out["grad_short_frames"]

    def total():
        return compute_loss_and_grads(encoder, lf, sf, li, si, loss)["L"]

    rng = np.random.default_rng([seed, 99])
    names = sorted(targets)
    rows = []
    for k in range(num_coords):
        # every tensor is visited before any repeats
        name = names[k % len(names)] if k < len(names) else names[rng.integers(len(names))]
        arr = targets[name]
        idx = tuple(int(rng.integers(s)) for s in arr.shape)
        old = arr[idx]
        arr[idx] = old + h
        plus = total()
        arr[idx] = old - h
        minus = total()
        arr[idx] = old
        numeric = (plus - minus) / (2 * h)
        a = float(analytic[name][idx])
        rows.append({"tensor": name, "index": idx, "analytic": a, "numeric": numeric,
                     "rel_error": relative_error(a, numeric)})
    return {"max_rel_error": max(r["rel_error"] for r in rows), "coords": rows}
