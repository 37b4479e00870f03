"""Transformer encoder with projection and reconstruction heads.

Pre-LayerNorm blocks, sinusoidal (non-learned) positions, LayerNorm
everywhere (no batch statistics anywhere, so examples never couple).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 3
    d_model: int = 768
    d_ff: int = 3072
    num_heads: int = 12
    input_dim: int = 80
    d_proj: int = 128
    dropout: float = 0.0
    use_prenet: bool = False
    prenet_channels: int = 256
    prenet_kernel: int = 3
    prenet_stride: int = 2
    max_positions: int = 2048

    def __post_init__(self):
        if self.d_model % self.num_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by num_heads {self.num_heads}")
        for name in ("num_layers", "d_model", "d_ff", "num_heads", "input_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def output_frames(self, t_in: int) -> int:
        """Encoder output length for an input of t_in frames."""
        if not self.use_prenet:
            return t_in
        t = -(-t_in // self.prenet_stride)
        return -(-t // self.prenet_stride)


class ModelParams:
    """Named parameter tensors; the position table is stored but not trained."""

    NON_TRAINABLE = ("pos_table",)

    def __init__(self, tensors: dict[str, DiffTensor], config: EncoderConfig):
        self.tensors = tensors
        self.config = config

    def __getitem__(self, name: str) -> DiffTensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def trainable_items(self) -> list[tuple[str, DiffTensor]]:
        return [(n, self.tensors[n]) for n in self.names() if n not in self.NON_TRAINABLE]

    def zero_grads(self) -> None:
        for _, t in self.trainable_items():
            t.grad = None

    def num_parameters(self) -> int:
        return int(np.sum([t.size for _, t in self.trainable_items()]))


def sinusoid_table(length: int, d_model: int, dtype=np.float64) -> np.ndarray:
    """Interleaved sin/cos position encodings, shape (length, d_model)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    dim = np.arange(d_model // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * dim / d_model)
    table = np.zeros((length, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d_model - d_model // 2])
    return table.astype(dtype)


def _xavier(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_params(cfg: EncoderConfig, seed: int, dtype=np.float32) -> ModelParams:
    """Deterministic Xavier-uniform init; biases zero, LayerNorm scale one."""
    rng = np.random.default_rng(seed)
    dt = np.dtype(dtype)
    tensors: dict[str, DiffTensor] = {}

    def param(name: str, data: np.ndarray) -> None:
        tensors[name] = DiffTensor(np.ascontiguousarray(data, dtype=dt), requires_grad=True, name=name)

    d, k = cfg.d_model, cfg.prenet_kernel
    if cfg.use_prenet:
        ch = cfg.prenet_channels
        param("prenet.conv1.w", _xavier(rng, (k, cfg.input_dim, ch), k * cfg.input_dim, k * ch, dt))
        param("prenet.conv1.b", np.zeros(ch))
        param("prenet.conv2.w", _xavier(rng, (k, ch, ch), k * ch, k * ch, dt))
        param("prenet.conv2.b", np.zeros(ch))
        in_dim = ch
    else:
        in_dim = cfg.input_dim
    param("input_proj.w", _xavier(rng, (in_dim, d), in_dim, d, dt))
    param("input_proj.b", np.zeros(d))
    for i in range(cfg.num_layers):
        for mat in ("wq", "wk", "wv", "wo"):
            param(f"layers.{i}.attn.{mat}", _xavier(rng, (d, d), d, d, dt))
        param(f"layers.{i}.ln1.scale", np.ones(d))
        param(f"layers.{i}.ln1.shift", np.zeros(d))
        param(f"layers.{i}.ffn.w1", _xavier(rng, (d, cfg.d_ff), d, cfg.d_ff, dt))
        param(f"layers.{i}.ffn.b1", np.zeros(cfg.d_ff))
        param(f"layers.{i}.ffn.w2", _xavier(rng, (cfg.d_ff, d), cfg.d_ff, d, dt))
        param(f"layers.{i}.ffn.b2", np.zeros(d))
        param(f"layers.{i}.ln2.scale", np.ones(d))
        param(f"layers.{i}.ln2.shift", np.zeros(d))
    param("proj_head.w1", _xavier(rng, (d, d), d, d, dt))
    param("proj_head.w2", _xavier(rng, (d, cfg.d_proj), d, cfg.d_proj, dt))
    param("recon_head.w", _xavier(rng, (d, cfg.input_dim), d, cfg.input_dim, dt))
    param("recon_head.b", np.zeros(cfg.input_dim))
    tensors["pos_table"] = DiffTensor(sinusoid_table(cfg.max_positions, d, dt), name="pos_table")
    return ModelParams(tensors, cfg)


def _as_batch(x) -> tuple[DiffTensor, bool]:
    if not isinstance(x, DiffTensor):
        x = DiffTensor(np.asarray(x))
    if x.ndim == 2:
        return ad.reshape(x, (1,) + x.shape), True
    if x.ndim == 3:
        return x, False
    raise ad.ShapeError(f"expected (T, F) or (B, T, F), got {x.shape}")


def _attention(x: DiffTensor, params: ModelParams, layer: int, cfg: EncoderConfig) -> DiffTensor:
    bsz, t, d = x.shape
    h, dh = cfg.num_heads, cfg.d_model // cfg.num_heads

    def heads(mat: str, scale: float = 1.0) -> DiffTensor:
        y = ad.matmul(x, params[f"layers.{layer}.attn.{mat}"])
        if scale != 1.0:
            y = y * scale  # folded here: cheaper than scaling the T x T scores
        return ad.transpose(ad.reshape(y, (bsz, t, h, dh)), (0, 2, 1, 3))

    q, k, v = heads("wq", 1.0 / float(np.sqrt(dh))), heads("wk"), heads("wv")
    scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2)))
    weights = ad.softmax(scores, axis=-1)
    ctx = ad.matmul(weights, v)
    merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (bsz, t, d))
    return ad.matmul(merged, params[f"layers.{layer}.attn.wo"])


def attention_weights(x: np.ndarray, params: ModelParams, layer: int) -> np.ndarray:
    """Softmax attention matrix of one layer for inspection, (B, H, T, T)."""
    cfg = params.config
    xb, _ = _as_batch(x)
    bsz, t, _ = xb.shape
    h, dh = cfg.num_heads, cfg.d_model // cfg.num_heads

    def heads(mat: str) -> np.ndarray:
        y = xb.data @ params[f"layers.{layer}.attn.{mat}"].data
        return y.reshape(bsz, t, h, dh).transpose(0, 2, 1, 3)

    scores = heads("wq") @ heads("wk").transpose(0, 1, 3, 2) / np.sqrt(dh)
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def encode(x, params: ModelParams, cfg: EncoderConfig | None = None, rng: np.random.Generator | None = None) -> DiffTensor:
    """Map (B, T, input_dim) features to (B, T', d_model) hidden vectors.

    Accepts a single (T, input_dim) sequence as well and squeezes the result.
    """
    cfg = cfg or params.config
    xb, squeeze = _as_batch(x)
    if xb.shape[-1] != cfg.input_dim:
        raise ad.ShapeError(f"input feature dim {xb.shape[-1]} != configured {cfg.input_dim}")
    if cfg.use_prenet:
        if xb.shape[1] < 4:
            raise ad.ShapeError(f"prenet needs at least 4 frames, got {xb.shape[1]}")
        xb = ad.relu(ad.conv1d(xb, params["prenet.conv1.w"], params["prenet.conv1.b"], cfg.prenet_stride))
        xb = ad.relu(ad.conv1d(xb, params["prenet.conv2.w"], params["prenet.conv2.b"], cfg.prenet_stride))
    elif xb.shape[1] < 1:
        raise ad.ShapeError("encoder needs at least one frame")
    h = ad.matmul(xb, params["input_proj.w"]) + params["input_proj.b"]
    t = h.shape[1]
    table = params["pos_table"].data
    if t > table.shape[0]:
        raise ad.ShapeError(f"sequence of {t} frames exceeds the {table.shape[0]}-entry position table")
    h = h + DiffTensor(table[:t])
    for i in range(cfg.num_layers):
        ln1 = ad.layer_norm(h, params[f"layers.{i}.ln1.scale"], params[f"layers.{i}.ln1.shift"])
        attn = _attention(ln1, params, i, cfg)
        if cfg.dropout > 0.0 and rng is not None:
            attn = ad.dropout(attn, cfg.dropout, rng)
        h = h + attn
        ln2 = ad.layer_norm(h, params[f"layers.{i}.ln2.scale"], params[f"layers.{i}.ln2.shift"])
        ff = ad.matmul(ad.relu(ad.matmul(ln2, params[f"layers.{i}.ffn.w1"]) + params[f"layers.{i}.ffn.b1"]),
                       params[f"layers.{i}.ffn.w2"]) + params[f"layers.{i}.ffn.b2"]
        if cfg.dropout > 0.0 and rng is not None:
            ff = ad.dropout(ff, cfg.dropout, rng)
        h = h + ff
    if squeeze:
        h = ad.reshape(h, h.shape[1:])
    return h


def project(h, params: ModelParams) -> DiffTensor:
    """Average-pool over time, then the two-layer head: W2 relu(W1 pooled)."""
    if not isinstance(h, DiffTensor):
        h = DiffTensor(np.asarray(h))
    pooled = ad.mean_over_time(h)
    return ad.matmul(ad.relu(ad.matmul(pooled, params["proj_head.w1"])), params["proj_head.w2"])


def reconstruct(h, params: ModelParams) -> DiffTensor:
    """Per-frame affine map from d_model back to the input feature dim."""
    if not isinstance(h, DiffTensor):
        h = DiffTensor(np.asarray(h))
    return ad.matmul(h, params["recon_head.w"]) + params["recon_head.b"]
