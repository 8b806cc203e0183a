"""Temporal aggregation, correspondence matching and the contrastive losses.

The short clip always plays the anchor.  For the fine-grained loss each
aggregated short-clip embedding is paired with the temporally closest
aggregated long-clip embedding of the same video; the negatives are all
aggregated long-clip embeddings of the other videos in the batch.  The
persistent loss is the same construction on one globally pooled embedding
per clip.  Everything is computed through log-sum-exp.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoder import l2_normalize, l2_normalize_backward
from .errors import AggregationError, ConfigError, ContractError

TAU_DEFAULT = 0.1
PRESETS = {"teg-ps": 0.0, "teg-fg": 0.9}


@dataclass(frozen=True)
class AggregationConfig:
    n: int = 1  # groups in the short clip
    m: int = 4  # groups in the long clip

    def validate(self, short_T: int | None = None, long_T: int | None = None) -> None:
        if self.n < 1 or self.m < 1:
            raise ConfigError(f"n and m must be >= 1, got n={self.n}, m={self.m}")
        if short_T is not None and short_T % self.n:
            raise ConfigError(f"n={self.n} does not divide short clip length {short_T}")
        if long_T is not None and long_T % self.m:
            raise ConfigError(f"m={self.m} does not divide long clip length {long_T}")


@dataclass(frozen=True)
class LossConfig:
    tau: float = TAU_DEFAULT
    alpha: float = 0.9
    agg: AggregationConfig = field(default_factory=AggregationConfig)

    def validate(self) -> None:
        if not self.tau > 0:
            raise ConfigError(f"temperature tau must be > 0, got {self.tau}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        self.agg.validate()


@dataclass
class EmbeddingBlock:
    embeddings: np.ndarray  # (..., groups, c), unit rows
    temporal_index: np.ndarray  # (..., groups)
    source: str = "short"
    space: str = "fine"
    _cache: dict | None = field(default=None, repr=False)

    @property
    def groups(self) -> int:
        return self.embeddings.shape[-2]


@dataclass
class LossBreakdown:
    L_f: float
    L_p: float
    L: float
    alpha: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)


# -- aggregation -------------------------------------------------------------


def aggregate(features: np.ndarray, frame_index: np.ndarray, groups: int,
              source: str = "short", space: str = "fine",
              renormalize: bool = True) -> EmbeddingBlock:
    """Average consecutive rows into ``groups`` groups along axis -2.

    ``frame_index`` holds the original-video frame index of each row (shape
    ``(..., T)`` or ``(T,)``); a group's temporal index is the mean index of
    the rows it pools.
    """
    features = np.asarray(features, dtype=np.float64)
    steps = features.shape[-2]
    if groups < 1 or steps % groups:
        raise AggregationError(f"{groups} groups do not divide clip length {steps}")
    size = steps // groups
    lead = features.shape[:-2]
    c = features.shape[-1]
    means = features.reshape(lead + (groups, size, c)).mean(axis=-2)
    index = np.asarray(frame_index, dtype=np.float64)
    index = index.reshape(index.shape[:-1] + (groups, size)).mean(axis=-1)
    if renormalize:
        unit, norms = l2_normalize(means)
    else:
        unit, norms = means, None
    return EmbeddingBlock(unit, np.broadcast_to(index, lead + (groups,)).copy(), source, space,
                          {"size": size, "unit": unit, "norms": norms})


def aggregate_backward(grad: np.ndarray, block: EmbeddingBlock) -> np.ndarray:
    """Gradient w.r.t. the pre-aggregation rows given one w.r.t. ``block``."""
    if block._cache is None:
        raise ContractError("block carries no aggregation cache")
    c = block._cache
    if c["norms"] is not None:
        grad = l2_normalize_backward(grad, c["unit"], c["norms"])
    return np.repeat(grad / c["size"], c["size"], axis=-2)


# -- correspondence ----------------------------------------------------------


def match_correspondence(short_index, long_index) -> np.ndarray:
    """For every short group i, the long group j with the closest temporal index.

    Works on ``(n,)``/``(m,)`` vectors or batched ``(..., n)``/``(..., m)``
    arrays.  Ties resolve to the smaller ``j``.
    """
    if isinstance(short_index, EmbeddingBlock):
        short_index = short_index.temporal_index
    if isinstance(long_index, EmbeddingBlock):
        long_index = long_index.temporal_index
    s = np.asarray(short_index, dtype=np.float64)
    l = np.asarray(long_index, dtype=np.float64)
    if s.size == 0 or l.size == 0:
        raise ContractError("cannot match against an empty block")
    dist = np.abs(s[..., :, None] - l[..., None, :])
    return np.argmin(dist, axis=-1)  # argmin returns the first minimum


# -- losses ------------------------------------------------------------------


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ConfigError(f"temperature tau must be > 0, got {tau}")


def _logsumexp(x: np.ndarray, axis: int = -1) -> np.ndarray:
    top = np.max(x, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    return np.squeeze(top, axis) + np.log(np.sum(np.exp(x - top), axis=axis))


def nce_from_logits(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cross-entropy with the positive in column 0, and the softmax.

    ``logits`` is ``(rows, 1 + K)``; returns per-row losses and probabilities.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    lse = _logsumexp(logits, axis=1)
    return lse - logits[:, 0], np.exp(logits - lse[:, None])


def _as_rows(negatives, c: int) -> np.ndarray:
    if negatives is None:
        return np.zeros((0, c))
    if isinstance(negatives, EmbeddingBlock):
        return negatives.embeddings.reshape(-1, c)
    if isinstance(negatives, (list, tuple)):
        if not negatives:
            return np.zeros((0, c))
        return np.concatenate([_as_rows(n, c) for n in negatives], axis=0)
    return np.asarray(negatives, dtype=np.float64).reshape(-1, c)


def fine_loss(anchor, positive, negatives, tau: float, match=None):
    """Fine-grained loss of one video.

    ``anchor`` is the ``(n, c)`` short-clip block, ``positive`` the ``(m, c)``
    long-clip block of the same video and ``negatives`` the aggregated
    long-clip embeddings of other videos (``(K, c)`` rows or a list of
    blocks).  ``match`` defaults to the temporal correspondence when blocks
    are given.  Returns ``(value, grads)`` where ``grads`` has keys
    ``anchor``, ``positive`` and ``negatives``.
    """
    _check_tau(tau)
    if match is None:
        if not (isinstance(anchor, EmbeddingBlock) and isinstance(positive, EmbeddingBlock)):
            raise ContractError("match is required when blocks carry no temporal index")
        match = match_correspondence(anchor, positive)
    a = anchor.embeddings if isinstance(anchor, EmbeddingBlock) else np.asarray(anchor, float)
    p = positive.embeddings if isinstance(positive, EmbeddingBlock) else np.asarray(positive, float)
    if a.ndim != 2 or p.ndim != 2 or a.shape[0] == 0 or p.shape[0] == 0:
        raise ContractError(f"anchor and positive must be non-empty 2-D blocks, got "
                            f"{a.shape} and {p.shape}")
    neg = _as_rows(negatives, a.shape[1])
    match = np.asarray(match, dtype=np.int64)
    n = a.shape[0]

    keys = p[match]  # (n, c)
    pos_logit = np.sum(a * keys, axis=1) / tau
    neg_logit = a @ neg.T / tau  # (n, K)
    logits = np.concatenate([pos_logit[:, None], neg_logit], axis=1)
    per_anchor, prob = nce_from_logits(logits)
    value = float(np.mean(per_anchor))

    d_logits = prob / n
    d_logits[:, 0] -= 1.0 / n
    d_pos = d_logits[:, 0]
    d_neg = d_logits[:, 1:]
    g_anchor = (d_pos[:, None] * keys + d_neg @ neg) / tau
    g_positive = np.zeros_like(p)
    np.add.at(g_positive, match, d_pos[:, None] * a / tau)
    g_negatives = d_neg.T @ a / tau
    return value, {"anchor": g_anchor, "positive": g_positive, "negatives": g_negatives}


def persistent_loss(z_short, z_long, negatives, tau: float):
    """Persistent loss of one video on globally pooled ``(c,)`` embeddings.

    Returns ``(value, grads)`` with keys ``short``, ``long``, ``negatives``.
    """
    _check_tau(tau)
    s = np.asarray(z_short, dtype=np.float64).reshape(-1)
    l = np.asarray(z_long, dtype=np.float64).reshape(-1)
    neg = _as_rows(negatives, s.size)
    logits = np.concatenate([[s @ l], neg @ s]) / tau
    lse = _logsumexp(logits)
    value = float(lse - logits[0])
    prob = np.exp(logits - lse)
    w = prob.copy()
    w[0] -= 1.0
    g_short = (w[0] * l + w[1:] @ neg) / tau
    g_long = w[0] * s / tau
    g_neg = np.outer(w[1:], s) / tau
    return value, {"short": g_short, "long": g_long, "negatives": g_neg}


def softmax_mass(anchor, positive, negatives, tau: float, match) -> np.ndarray:
    """Per-anchor sum of positive and negative softmax probabilities (all ~1)."""
    a = np.asarray(anchor, float)
    p = np.asarray(positive, float)
    neg = _as_rows(negatives, a.shape[1])
    match = np.asarray(match, dtype=np.int64)
    logits = np.concatenate([np.sum(a * p[match], 1)[:, None], a @ neg.T], axis=1) / tau
    prob = np.exp(logits - _logsumexp(logits, axis=1)[:, None])
    return prob.sum(axis=1)


def batch_contrastive_loss(short: np.ndarray, long: np.ndarray, match: np.ndarray,
                           tau: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Batch-mean of the per-video loss with in-batch negatives.

    ``short`` is ``(B, n, c)``, ``long`` ``(B, m, c)`` and ``match`` ``(B, n)``.
    Video b's negatives are every long-clip row of the other B-1 videos.
    Returns ``(value, grad_short, grad_long)``.  With n = m = 1 this is the
    persistent loss; otherwise the fine-grained one.
    """
    _check_tau(tau)
    B, n, _ = short.shape
    m = long.shape[1]
    logits = np.einsum("bic,xjc->bixj", short, long) / tau
    own = np.eye(B, dtype=bool)[:, None, :, None]
    positive = np.zeros((B, n, B, m), dtype=bool)
    bi, ii = np.meshgrid(np.arange(B), np.arange(n), indexing="ij")
    positive[bi, ii, bi, match] = True
    allowed = ~own | positive
    masked = np.where(allowed, logits, -np.inf).reshape(B, n, B * m)
    lse = _logsumexp(masked, axis=-1)
    pos_logit = logits[bi, ii, bi, match]
    value = float(np.mean(lse - pos_logit))

    prob = np.exp(masked - lse[..., None]).reshape(B, n, B, m)
    d_logits = (prob - positive) / (B * n)
    grad_short = np.einsum("bixj,xjc->bic", d_logits, long) / tau
    grad_long = np.einsum("bixj,bic->xjc", d_logits, short) / tau
    return value, grad_short, grad_long


def total_loss(L_f: float, L_p: float, alpha: float,
               grads_f: dict[str, np.ndarray] | None = None,
               grads_p: dict[str, np.ndarray] | None = None) -> LossBreakdown:
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    grads = {}
    for key, g in (grads_f or {}).items():
        grads[f"fine/{key}"] = alpha * g
    for key, g in (grads_p or {}).items():
        grads[f"persistent/{key}"] = (1.0 - alpha) * g
    return LossBreakdown(L_f=L_f, L_p=L_p, L=alpha * L_f + (1.0 - alpha) * L_p,
                         alpha=alpha, grads=grads)
