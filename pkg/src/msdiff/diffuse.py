"""Diffusion in manifold-coordinate space.

Continuous cosine schedule on t in [0, 1], a time-conditioned MLP head that
predicts both the injected noise and the clean coordinate, and the single
step refinement used at inference: ``u_pred`` of the head evaluated at
``(alpha(t*) * u_raw, t*)``.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numkit as nk
from .numkit import Tensor

log = logging.getLogger(__name__)

Params = dict[str, Tensor]

DEFAULT_T_STAR = 0.25


def _check_t(t):
    t = np.asarray(t, dtype=np.float64)
    if np.any((t < 0) | (t > 1)) or not np.all(np.isfinite(t)):
        raise ValueError(f"diffusion time must lie in [0, 1], got {t}")
    return t


def schedule(t):
    """``(alpha, sigma) = (cos(pi t / 2), sin(pi t / 2))``; works elementwise on arrays."""
    t = _check_t(t)
    return np.cos(0.5 * np.pi * t), np.sin(0.5 * np.pi * t)


def forward_diffuse(u0: np.ndarray, t, seed: int | np.random.Generator = 0, noise: np.ndarray | None = None):
    """Return ``(u_t, eps)`` with ``u_t = alpha(t) u0 + sigma(t) eps``.

    ``t`` may be a scalar or one time per row of ``u0``.
    """
    u0 = np.asarray(u0, dtype=np.float64)
    alpha, sigma = schedule(t)
    if noise is None:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        noise = rng.normal(size=u0.shape)
    if np.ndim(alpha):
        alpha, sigma = alpha[:, None], sigma[:, None]
    return alpha * u0 + sigma * noise, noise


@dataclass(frozen=True)
class TimeEmbedding:
    n_freqs: int = 16
    w_min: float = 1.0
    w_max: float = 1000.0

    @property
    def dim(self) -> int:
        return 2 * self.n_freqs

    @property
    def freqs(self) -> np.ndarray:
        if self.n_freqs == 1:
            return np.array([self.w_min])
        return np.geomspace(self.w_min, self.w_max, self.n_freqs)


def time_embed(t, spec: TimeEmbedding = TimeEmbedding()) -> np.ndarray:
    """Interleaved ``[sin(w1 t), cos(w1 t), ...]``; (2K,) for scalar t, (B, 2K) for a vector."""
    t = _check_t(t)
    arg = np.multiply.outer(t, spec.freqs)
    out = np.empty(arg.shape[:-1] + (2 * spec.n_freqs,))
    out[..., 0::2] = np.sin(arg)
    out[..., 1::2] = np.cos(arg)
    return out


@dataclass(frozen=True)
class HeadConfig:
    dim: int = 64
    hidden_mult: int = 4
    time: TimeEmbedding = TimeEmbedding()

    @property
    def hidden(self) -> int:
        return self.hidden_mult * self.dim


def init_head(cfg: HeadConfig, seed: int = 0) -> Params:
    rng = np.random.default_rng(seed)
    d_in, hid, d = cfg.dim + cfg.time.dim, cfg.hidden, cfg.dim
    params = {}
    for name, (fi, fo) in {"l1": (d_in, hid), "l2": (hid, hid), "l3": (hid, 2 * d)}.items():
        params[f"{name}.weight"] = Tensor(rng.normal(0.0, 1.0 / math.sqrt(fi), size=(fi, fo)), requires_grad=True)
        params[f"{name}.bias"] = Tensor(np.zeros(fo), requires_grad=True)
    return params


def head_forward(u_t, t, params: Params, cfg: HeadConfig) -> tuple[Tensor, Tensor]:
    """MLP on concat(u_t, gamma(t)); returns (v_pred, u_pred), each (B, D)."""
    u_t = nk.as_tensor(u_t)
    if u_t.ndim == 1:
        u_t = nk.reshape(u_t, (1, -1))
    b = u_t.shape[0]
    gamma = time_embed(np.broadcast_to(np.asarray(t, dtype=np.float64), (b,)), cfg.time)
    h = nk.concat([u_t, Tensor(gamma)], axis=-1)
    h = nk.gelu(nk.matmul(h, params["l1.weight"]) + params["l1.bias"])
    h = nk.gelu(nk.matmul(h, params["l2.weight"]) + params["l2.bias"])
    out = nk.matmul(h, params["l3.weight"]) + params["l3.bias"]
    d = cfg.dim
    return nk.narrow(out, 0, d), nk.narrow(out, d, 2 * d)


def diffusion_loss(u0, t, seed, params: Params, cfg: HeadConfig, lambda_x: float = 1.0, noise=None):
    """``L_v + lambda_x * L_x`` with ``L_v = mse(v_pred, eps)`` and ``L_x = mse(u_pred, u0)``.

    Returns (total, L_v, L_x).
    """
    u0 = np.atleast_2d(np.asarray(u0, dtype=np.float64))
    u_t, eps = forward_diffuse(u0, t, seed, noise)
    v_pred, u_pred = head_forward(u_t, t, params, cfg)
    l_v = nk.mse(v_pred, Tensor(eps))
    l_x = nk.mse(u_pred, Tensor(u0))
    if lambda_x == 0:
        return l_v, l_v, l_x
    return l_v + nk.mul(l_x, lambda_x), l_v, l_x


def refine(u_raw, t_star: float, params: Params, cfg: HeadConfig) -> np.ndarray:
    """Single deterministic step: ``u_pred(alpha(t*) u_raw, t*)``."""
    if not 0 < t_star < 1:
        raise ValueError(f"t_star must lie in (0, 1), got {t_star}")
    u_raw = np.atleast_2d(np.asarray(u_raw, dtype=np.float64))
    if u_raw.shape[1] != cfg.dim:
        raise nk.ShapeError(f"latent width {u_raw.shape[1]} does not match head dim {cfg.dim}")
    alpha, _ = schedule(t_star)
    frozen = {k: Tensor(v.data) for k, v in params.items()}
    out = [head_forward(alpha * u_raw[i:i + 1024], t_star, frozen, cfg)[1].data for i in range(0, len(u_raw), 1024)]
    return np.concatenate(out)


@dataclass
class DiffusionHistory:
    loss: list[float] = field(default_factory=list)
    l_v: list[float] = field(default_factory=list)
    l_x: list[float] = field(default_factory=list)


def train_diffusion(latents: np.ndarray, cfg: HeadConfig, epochs: int = 10, seed: int = 0, batch_size: int = 64,
                    lr: float = 1e-3, weight_decay: float = 1e-4, lambda_x: float = 1.0,
                    params: Params | None = None) -> tuple[Params, DiffusionHistory]:
    """Fit the head on fixed latents with t ~ U(0, 1) and fresh noise per sample."""
    latents = np.asarray(latents, dtype=np.float64)
    if not np.all(np.isfinite(latents)):
        raise ValueError("latents contain non-finite values")
    params = init_head(cfg, seed) if params is None else params
    opt = nk.AdamW(params, lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(seed + 1)
    hist = DiffusionHistory()
    n = len(latents)
    step = 0
    for epoch in range(epochs):
        sums, batches = np.zeros(3), 0
        for idx in np.array_split(rng.permutation(n), max(1, math.ceil(n / batch_size))):
            t = rng.uniform(0.0, 1.0, size=len(idx))
            opt.zero_grad()
            total, l_v, l_x = diffusion_loss(latents[idx], t, rng, params, cfg, lambda_x)
            if not np.isfinite(total.item()):
                raise FloatingPointError(f"non-finite diffusion loss at step {step}")
            total.backward()
            opt.step()
            step += 1
            sums += (total.item(), l_v.item(), l_x.item())
            batches += 1
        means = sums / batches
        hist.loss.append(means[0])
        hist.l_v.append(means[1])
        hist.l_x.append(means[2])
        log.info("diffusion epoch %d: loss=%.5f L_v=%.5f L_x=%.5f", epoch + 1, *means)
    return params, hist


def to_checkpoint(params: Params, cfg: HeadConfig, t_star: float = DEFAULT_T_STAR) -> dict[str, Tensor]:
    out = dict(params)
    out["meta.dim"] = Tensor(float(cfg.dim))
    out["meta.hidden_mult"] = Tensor(float(cfg.hidden_mult))
    out["meta.n_freqs"] = Tensor(float(cfg.time.n_freqs))
    out["meta.w_min"] = Tensor(cfg.time.w_min)
    out["meta.w_max"] = Tensor(cfg.time.w_max)
    out["meta.t_star"] = Tensor(t_star)
    return out


def from_checkpoint(ckpt: dict[str, Tensor]) -> tuple[Params, HeadConfig, float]:
    try:
        time = TimeEmbedding(int(ckpt["meta.n_freqs"].item()), ckpt["meta.w_min"].item(), ckpt["meta.w_max"].item())
        cfg = HeadConfig(int(ckpt["meta.dim"].item()), int(ckpt["meta.hidden_mult"].item()), time)
        t_star = ckpt["meta.t_star"].item()
    except KeyError as exc:
        raise ValueError(f"not a diffusion-head checkpoint: missing {exc}") from None
    return {k: v for k, v in ckpt.items() if not k.startswith("meta.")}, cfg, t_star


# ---------------------------------------------------------------------------
# latents file
# ---------------------------------------------------------------------------

LATENT_MAGIC = b"MSLT"


class LatentFormatError(ValueError):
    pass


def write_latents(latents: np.ndarray, labels, path) -> None:
    """``MSLT``, u32 count, u32 D, count*D f64 LE, count u16 labels."""
    latents = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels)
    if latents.ndim != 2 or len(labels) != len(latents):
        raise ValueError(f"latents {latents.shape} and labels {labels.shape} are not aligned")
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
        raise ValueError("labels must fit in u16")
    n, d = latents.shape
    Path(path).write_bytes(b"".join([LATENT_MAGIC, struct.pack("<II", n, d), latents.astype("<f8").tobytes(),
                                     labels.astype("<u2").tobytes()]))


def read_latents(path) -> tuple[np.ndarray, np.ndarray]:
    buf = Path(path).read_bytes()
    if len(buf) < 12 or buf[:4] != LATENT_MAGIC:
        raise LatentFormatError(f"{path}: not a latents file (magic {buf[:4]!r} at byte 0)")
    n, d = struct.unpack("<II", buf[4:12])
    expected = 12 + 8 * n * d + 2 * n
    if len(buf) != expected:
        raise LatentFormatError(f"{path}: expected {expected} bytes for {n}x{d} latents, got {len(buf)}")
    values = np.frombuffer(buf, dtype="<f8", count=n * d, offset=12).reshape(n, d).astype(np.float64)
    labels = np.frombuffer(buf, dtype="<u2", count=n, offset=12 + 8 * n * d).astype(np.int64)
    return values, labels
