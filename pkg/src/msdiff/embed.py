"""Spectral-bottleneck transformer that maps degraded patches to manifold coordinates.

The forward path for a batch of (B, P, P, C) patches:

1. per-pixel spectral projection C -> r (the bottleneck)
2. tiling into N = (P/s)^2 non-overlapping s x s tiles, each flattened and
   projected to D, plus a learned positional embedding
3. L pre-norm transformer blocks (RMS norm, multi-head attention, GELU FFN)
4. RMS-normalize every token and average them into u (B, D)

Heads on top of u: an affine decoder back to the patch, and a linear
classifier used only as a training constraint.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import numkit as nk
from .degrade import DegradationSpec, apply_composite
from .numkit import Tensor

log = logging.getLogger(__name__)

Params = dict[str, Tensor]


@dataclass(frozen=True)
class EmbedConfig:
    patch_size: int = 9
    stride: int = 3
    bands: int = 16
    embed_dim: int = 64
    rank: int = 8
    layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    lambda_cls: float = 0.1
    n_classes: int = 4

    def __post_init__(self):
        if self.patch_size % self.stride:
            raise ValueError(f"patch_size {self.patch_size} not divisible by stride {self.stride}")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if not 1 <= self.rank < self.bands:
            raise ValueError(f"rank must satisfy 1 <= r < C, got r={self.rank}, C={self.bands}")

    @property
    def grid(self) -> int:
        return self.patch_size // self.stride

    @property
    def n_tokens(self) -> int:
        return self.grid**2

    @property
    def patch_numel(self) -> int:
        return self.patch_size**2 * self.bands


def init_params(cfg: EmbedConfig, seed: int = 0) -> Params:
    rng = np.random.default_rng(seed)
    d, p = cfg.embed_dim, cfg

    def w(fan_in, fan_out, scale=1.0):
        return Tensor(rng.normal(0.0, scale / math.sqrt(fan_in), size=(fan_in, fan_out)), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    def ones(n):
        return Tensor(np.ones(n), requires_grad=True)

    tile = cfg.rank * cfg.stride**2
    params: Params = {
        "bottleneck": w(cfg.bands, cfg.rank),
        "token.weight": w(tile, d),
        "token.bias": zeros(d),
        "pos": Tensor(rng.normal(0.0, 0.02, size=(cfg.n_tokens, d)), requires_grad=True),
    }
    out_scale = 1.0 / math.sqrt(2 * max(cfg.layers, 1))
    for i in range(cfg.layers):
        params[f"block{i}.norm1"] = ones(d)
        for name in ("q", "k", "v"):
            params[f"block{i}.attn.{name}"] = w(d, d)
        params[f"block{i}.attn.o"] = w(d, d, out_scale)
        params[f"block{i}.norm2"] = ones(d)
        params[f"block{i}.ffn.w1"] = w(d, p.ffn_mult * d)
        params[f"block{i}.ffn.b1"] = zeros(p.ffn_mult * d)
        params[f"block{i}.ffn.w2"] = w(p.ffn_mult * d, d, out_scale)
        params[f"block{i}.ffn.b2"] = zeros(d)
    params["final_norm"] = ones(d)
    params["decoder.weight"] = w(d, cfg.patch_numel)
    params["decoder.bias"] = zeros(cfg.patch_numel)
    params["cls.weight"] = Tensor(rng.normal(0.0, 0.01, size=(cfg.n_classes, d)), requires_grad=True)
    params["cls.bias"] = zeros(cfg.n_classes)
    return params


def patch_embed(patches, params: Params, cfg: EmbedConfig) -> Tensor:
    """(B, P, P, C) patches -> (B, N, D) tokens."""
    x = nk.as_tensor(patches)
    if x.ndim == 3:
        x = nk.reshape(x, (1,) + x.shape)
    b = x.shape[0]
    if x.shape[1:] != (cfg.patch_size, cfg.patch_size, cfg.bands):
        raise nk.ShapeError(f"patch shape {x.shape[1:]} does not match config")
    g, s = cfg.grid, cfg.stride
    z = nk.matmul(x, params["bottleneck"])  # (B, P, P, r)
    z = nk.reshape(z, (b, g, s, g, s, cfg.rank))
    z = nk.transpose(z, (0, 1, 3, 2, 4, 5))
    z = nk.reshape(z, (b, cfg.n_tokens, s * s * cfg.rank))
    z = nk.matmul(z, params["token.weight"]) + params["token.bias"]
    return z + params["pos"]


def attention(h: Tensor, params: Params, prefix: str, heads: int) -> Tensor:
    b, n, d = h.shape
    dh = d // heads

    def split(t):
        return nk.transpose(nk.reshape(t, (b, n, heads, dh)), (0, 2, 1, 3))

    q = split(nk.matmul(h, params[f"{prefix}.q"]))
    k = split(nk.matmul(h, params[f"{prefix}.k"]))
    v = split(nk.matmul(h, params[f"{prefix}.v"]))
    scores = nk.mul(nk.matmul(q, nk.swap_last(k)), 1.0 / math.sqrt(dh))
    mixed = nk.matmul(nk.softmax(scores), v)  # (B, h, N, dh)
    mixed = nk.reshape(nk.transpose(mixed, (0, 2, 1, 3)), (b, n, d))
    return nk.matmul(mixed, params[f"{prefix}.o"])


def transformer_forward(z: Tensor, params: Params, cfg: EmbedConfig) -> Tensor:
    for i in range(cfg.layers):
        pre = f"block{i}"
        z = z + attention(nk.rms_norm(z, params[f"{pre}.norm1"]), params, f"{pre}.attn", cfg.heads)
        h = nk.rms_norm(z, params[f"{pre}.norm2"])
        h = nk.gelu(nk.matmul(h, params[f"{pre}.ffn.w1"]) + params[f"{pre}.ffn.b1"])
        z = z + (nk.matmul(h, params[f"{pre}.ffn.w2"]) + params[f"{pre}.ffn.b2"])
    return z


def pool_manifold(z: Tensor, params: Params) -> Tensor:
    """Mean over tokens of the RMS-normalized final tokens: (B, N, D) -> (B, D)."""
    return nk.mean(nk.rms_norm(z, params["final_norm"]), axis=-2)


def encode(patches, params: Params, cfg: EmbedConfig) -> Tensor:
    return pool_manifold(transformer_forward(patch_embed(patches, params, cfg), params, cfg), params)


def reconstruct(u: Tensor, params: Params, cfg: EmbedConfig) -> Tensor:
    out = nk.matmul(u, params["decoder.weight"]) + params["decoder.bias"]
    return nk.reshape(out, (u.shape[0], cfg.patch_size, cfg.patch_size, cfg.bands))


def class_logits(u: Tensor, params: Params) -> Tensor:
    return nk.matmul(u, nk.swap_last(params["cls.weight"])) + params["cls.bias"]


def embed_loss(degraded, clean, labels, params: Params, cfg: EmbedConfig):
    """Joint objective ``L_rec + lambda_cls * L_cls``; labels are 0-based.

    Returns (total, rec, cls) tensors.
    """
    u = encode(degraded, params, cfg)
    rec = nk.mse(reconstruct(u, params, cfg), nk.as_tensor(clean))
    cls = nk.softmax_cross_entropy(class_logits(u, params), labels)
    if cfg.lambda_cls == 0:
        return rec, rec, cls
    return rec + nk.mul(cls, cfg.lambda_cls), rec, cls


def encode_batched(patches: np.ndarray, params: Params, cfg: EmbedConfig, batch_size: int = 512) -> np.ndarray:
    """Inference-only encoding of many patches without recording gradients."""
    frozen = {k: Tensor(v.data) for k, v in params.items()}
    out = [encode(patches[i:i + batch_size], frozen, cfg).data for i in range(0, len(patches), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, cfg.embed_dim))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    rec: list[float] = field(default_factory=list)
    cls: list[float] = field(default_factory=list)


def degrade_batch(patches: np.ndarray, rng: np.random.Generator, concentration: float = 1.0) -> np.ndarray:
    """Each patch gets its own freshly drawn composite degradation."""
    return np.stack([apply_composite(p, DegradationSpec.random(rng, concentration)) for p in patches])


def train_embed(patches: np.ndarray, labels: np.ndarray, cfg: EmbedConfig, epochs: int = 10, seed: int = 0,
                batch_size: int = 32, lr: float = 1e-3, weight_decay: float = 1e-4,
                concentration: float = 1.0, params: Params | None = None) -> tuple[Params, TrainHistory]:
    """Train on clean (n, P, P, C) patches with 0-based labels under random composite degradation."""
    params = init_params(cfg, seed) if params is None else params
    opt = nk.AdamW(params, lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(seed + 1)
    hist = TrainHistory()
    step = 0
    n = len(patches)
    for epoch in range(epochs):
        sums = np.zeros(3)
        batches = 0
        for idx in np.array_split(rng.permutation(n), max(1, math.ceil(n / batch_size))):
            clean = patches[idx]
            noisy = degrade_batch(clean, rng, concentration)
            opt.zero_grad()
            total, rec, cls = embed_loss(noisy, clean, labels[idx], params, cfg)
            if not np.isfinite(total.item()):
                raise FloatingPointError(f"non-finite embedding loss at step {step}")
            total.backward()
            opt.step()
            step += 1
            sums += (total.item(), rec.item(), cls.item())
            batches += 1
        mean_loss = sums / batches
        hist.loss.append(mean_loss[0])
        hist.rec.append(mean_loss[1])
        hist.cls.append(mean_loss[2])
        log.info("embed epoch %d: loss=%.5f rec=%.5f cls=%.5f", epoch + 1, *mean_loss)
    return params, hist


# ---------------------------------------------------------------------------
# checkpoint metadata
# ---------------------------------------------------------------------------

_META_KEYS = ("patch_size", "stride", "bands", "embed_dim", "rank", "layers", "heads", "ffn_mult", "n_classes")


def to_checkpoint(params: Params, cfg: EmbedConfig) -> dict[str, Tensor]:
    out = dict(params)
    for key in _META_KEYS:
        out[f"meta.{key}"] = Tensor(float(getattr(cfg, key)))
    out["meta.lambda_cls"] = Tensor(cfg.lambda_cls)
    return out


def from_checkpoint(ckpt: dict[str, Tensor]) -> tuple[Params, EmbedConfig]:
    try:
        kw = {key: int(ckpt[f"meta.{key}"].item()) for key in _META_KEYS}
        kw["lambda_cls"] = ckpt["meta.lambda_cls"].item()
    except KeyError as exc:
        raise ValueError(f"not an embedding checkpoint: missing {exc}") from None
    params = {k: v for k, v in ckpt.items() if not k.startswith("meta.")}
    return params, EmbedConfig(**kw)
