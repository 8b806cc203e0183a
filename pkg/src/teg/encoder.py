"""A small hand-differentiated video encoder and its two projection heads.

Backbone: per-frame ``tanh`` perceptron followed by a 1-D temporal
convolution with edge-replicated same-length padding.  The temporal axis is
never pooled, so the backbone emits one feature vector per input frame.

Heads: two independent ``h -> h -> c`` perceptrons (``tanh`` in between) whose
per-frame outputs are L2-normalized.

All arrays may carry arbitrary leading batch dimensions, e.g. ``(B, T, d)``.
Forward results keep the intermediates needed by :meth:`Encoder.backward`.
"""

from __future__ import annotations

import dataclasses
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError, ContractError, NormalizationError, StateError

HEADS = ("persistent", "fine")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = 32
    frame_hidden: int = 32
    feature_dim: int = 32
    kernel_size: int = 3
    head_hidden: int = 32
    embed_dim: int = 16
    conv_init: str = "uniform"  # or "center"
    normalize: bool = True

    def validate(self) -> None:
        for name in ("input_dim", "frame_hidden", "feature_dim", "kernel_size",
                     "head_hidden", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.kernel_size % 2 != 1:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.conv_init not in ("uniform", "center"):
            raise ConfigError(f"unknown conv_init {self.conv_init!r}")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        d, h1, h, k = self.input_dim, self.frame_hidden, self.feature_dim, self.kernel_size
        shapes = {
            "frame_w": (d, h1),
            "frame_b": (h1,),
            "conv_w": (k, h1, h),
            "conv_b": (h,),
        }
        for head in HEADS:
            shapes[f"{head}_w1"] = (h, self.head_hidden)
            shapes[f"{head}_b1"] = (self.head_hidden,)
            shapes[f"{head}_w2"] = (self.head_hidden, self.embed_dim)
            shapes[f"{head}_b2"] = (self.embed_dim,)
        return shapes


def init_params(cfg: EncoderConfig, seed) -> dict[str, np.ndarray]:
    """Fan-in scaled uniform init; biases start at zero."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in cfg.shapes().items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[:-1]))
        bound = np.sqrt(3.0 / fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    if cfg.conv_init == "center" and cfg.frame_hidden == cfg.feature_dim:
        center = np.zeros((cfg.kernel_size, cfg.frame_hidden, cfg.feature_dim))
        center[cfg.kernel_size // 2] = np.eye(cfg.feature_dim)
        params["conv_w"] = 0.5 * params["conv_w"] + center
    return params


@dataclass
class FeatureSequence:
    """Backbone output ``(..., T, h)`` with the cache needed for backward."""

    values: np.ndarray
    clip: object = None
    _cache: dict | None = dataclasses.field(default=None, repr=False)


@dataclass
class Projection:
    """Unit-norm head output ``(..., T, c)``."""

    values: np.ndarray
    head: str
    _cache: dict | None = dataclasses.field(default=None, repr=False)


def l2_normalize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    bad = np.flatnonzero(~(norms.reshape(-1) > 0))
    if bad.size:
        raise NormalizationError(int(bad[0]))
    return x / norms, norms


def l2_normalize_backward(grad: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # Jacobian of x/|x| is (I - u u^T)/|x|.
    return (grad - unit * np.sum(grad * unit, axis=-1, keepdims=True)) / norms


def _pad_edges(x: np.ndarray, r: int) -> np.ndarray:
    if r == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(r, r), (0, 0)]
    return np.pad(x, widths, mode="edge")


class Encoder:
    def __init__(self, cfg: EncoderConfig, params: dict[str, np.ndarray] | None = None,
                 seed=0):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        self.params = init_params(cfg, seed) if params is None else params
        self._check_shapes(self.params)

    def _check_shapes(self, params):
        shapes = self.cfg.shapes()
        if set(params) != set(shapes):
            raise CheckpointError(
                f"parameter names {sorted(params)} do not match config {sorted(shapes)}"
            )
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise CheckpointError(
                    f"parameter {name} has shape {params[name].shape}, expected {shape}"
                )

    @property
    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    # -- forward ---------------------------------------------------------

    def forward_backbone(self, frames: np.ndarray, clip=None) -> FeatureSequence:
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim < 2 or frames.shape[-1] != self.cfg.input_dim:
            raise ContractError(
                f"frames must have shape (..., T, {self.cfg.input_dim}), got {frames.shape}"
            )
        if not np.all(np.isfinite(frames)):
            raise ContractError("frames contain non-finite values")
        p = self.params
        k = self.cfg.kernel_size
        r = k // 2
        steps = frames.shape[-2]
        hidden = np.tanh(frames @ p["frame_w"] + p["frame_b"])
        padded = _pad_edges(hidden, r)
        windows = np.stack([padded[..., o:o + steps, :] for o in range(k)], axis=-2)
        out = np.einsum("...tkh,khc->...tc", windows, p["conv_w"]) + p["conv_b"]
        cache = {"frames": frames, "hidden": hidden, "windows": windows}
        return FeatureSequence(out, clip, cache)

    def project(self, head: str, features) -> Projection:
        if head not in HEADS:
            raise ContractError(f"unknown head {head!r}, expected one of {HEADS}")
        feats = features.values if isinstance(features, FeatureSequence) else features
        feats = np.asarray(feats, dtype=np.float64)
        if not np.all(np.isfinite(feats)):
            raise ContractError("features contain non-finite values")
        p = self.params
        hidden = np.tanh(feats @ p[f"{head}_w1"] + p[f"{head}_b1"])
        raw = hidden @ p[f"{head}_w2"] + p[f"{head}_b2"]
        if self.cfg.normalize:
            unit, norms = l2_normalize(raw)
        else:
            unit, norms = raw, None
        cache = {"features": feats, "hidden": hidden, "unit": unit, "norms": norms}
        return Projection(unit, head, cache)

    # -- backward --------------------------------------------------------

    def backward(
        self,
        features: FeatureSequence,
        projections: dict[str, tuple[Projection, np.ndarray]] | None = None,
        grad_features: np.ndarray | None = None,
        grads: dict[str, np.ndarray] | None = None,
    ) -> dict[str, np.ndarray]:
        """Reverse-mode gradients for one backbone pass.

        ``projections`` maps a head name to ``(projection, grad_wrt_unit_rows)``
        for every head applied to ``features``; ``grad_features`` is an
        optional extra gradient arriving directly at the backbone output.
        Gradients are accumulated into ``grads`` (created if omitted), which
        is returned together with ``"frames"``, the input gradient.
        """
        if features._cache is None:
            raise StateError("backward called before forward_backbone")
        grads = self.zero_grads() if grads is None else grads
        p = self.params
        d_feat = np.zeros_like(features.values)
        if grad_features is not None:
            d_feat = d_feat + grad_features
        for head, (proj, d_unit) in (projections or {}).items():
            if proj._cache is None:
                raise StateError(f"backward called before project({head!r})")
            c = proj._cache
            d_raw = (
                l2_normalize_backward(d_unit, c["unit"], c["norms"])
                if c["norms"] is not None else d_unit
            )
            hid = c["hidden"]
            grads[f"{head}_w2"] += _outer_sum(hid, d_raw)
            grads[f"{head}_b2"] += d_raw.reshape(-1, d_raw.shape[-1]).sum(0)
            d_pre = (d_raw @ p[f"{head}_w2"].T) * (1.0 - hid**2)
            grads[f"{head}_w1"] += _outer_sum(c["features"], d_pre)
            grads[f"{head}_b1"] += d_pre.reshape(-1, d_pre.shape[-1]).sum(0)
            d_feat = d_feat + d_pre @ p[f"{head}_w1"].T

        c = features._cache
        k = self.cfg.kernel_size
        r = k // 2
        steps = d_feat.shape[-2]
        windows = c["windows"]
        lead = windows.shape[:-3]
        flat_w = windows.reshape(-1, k * windows.shape[-1])
        flat_d = d_feat.reshape(-1, d_feat.shape[-1])
        grads["conv_w"] += (flat_w.T @ flat_d).reshape(p["conv_w"].shape)
        grads["conv_b"] += flat_d.sum(0)
        d_windows = np.einsum("...tc,khc->...tkh", d_feat, p["conv_w"])
        d_padded = np.zeros(lead + (steps + 2 * r, windows.shape[-1]))
        for o in range(k):
            d_padded[..., o:o + steps, :] += d_windows[..., o, :]
        d_hidden = d_padded[..., r:r + steps, :].copy()
        if r:
            d_hidden[..., 0, :] += d_padded[..., :r, :].sum(-2)
            d_hidden[..., -1, :] += d_padded[..., steps + r:, :].sum(-2)
        d_pre = d_hidden * (1.0 - c["hidden"] ** 2)
        grads["frame_w"] += _outer_sum(c["frames"], d_pre)
        grads["frame_b"] += d_pre.reshape(-1, d_pre.shape[-1]).sum(0)
        grads["frames"] = d_pre @ p["frame_w"].T
        return grads

    # -- persistence -----------------------------------------------------

    def save(self, path: str | Path, extra: dict | None = None,
             arrays: dict[str, np.ndarray] | None = None) -> None:
        save_checkpoint(path, self, extra=extra, arrays=arrays)

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()


def _outer_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sum over all leading positions of the outer products a[..., :] b[..., :]."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def save_checkpoint(path, encoder: Encoder, extra: dict | None = None,
                    arrays: dict[str, np.ndarray] | None = None) -> None:
    """Write config, seed, metadata and all tensors to one ``.npz`` file.

    ``arrays`` holds additional named tensors (e.g. optimizer state), stored
    under an ``extra/`` prefix.
    """
    meta = {
        "format": "teg-checkpoint",
        "version": CHECKPOINT_VERSION,
        "encoder": dataclasses.asdict(encoder.cfg),
        "seed": encoder.seed,
        "extra": extra or {},
    }
    payload = {f"param/{k}": v for k, v in encoder.params.items()}
    payload.update({f"extra/{k}": v for k, v in (arrays or {}).items()})
    payload["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **payload)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[Encoder, dict, dict[str, np.ndarray]]:
    """Inverse of :func:`save_checkpoint`; returns (encoder, extra, arrays)."""
    with np.load(Path(path)) as z:
        if "meta" not in z.files:
            raise CheckpointError(f"{path}: not a checkpoint (no metadata)")
        meta = json.loads(z["meta"].tobytes().decode())
        params = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
        arrays = {k[len("extra/"):]: z[k] for k in z.files if k.startswith("extra/")}
    if meta.get("format") != "teg-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint format {meta.get('format')!r} v{meta.get('version')}"
        )
    cfg = EncoderConfig(**meta["encoder"])
    encoder = Encoder(cfg, params=params, seed=meta["seed"])
    return encoder, meta["extra"], arrays
