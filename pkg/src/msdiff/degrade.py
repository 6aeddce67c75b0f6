"""Composite degradation simulation for hyperspectral cubes.

Every operator takes an (H, W, C) array in [0, 1] (or an HsiCube), an
intensity ``s`` in [0, 1] and a seed, and returns a new cube clamped to
[0, 1]. ``s == 0`` returns an exact copy of the input.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import correlate1d

from .hsidata import HsiCube


class DegradationKind(enum.IntEnum):
    JPEG = 0
    ZERO_MEAN_GAUSSIAN = 1
    ADDITIVE_GAUSSIAN = 2
    POISSON = 3
    SALT_PEPPER = 4
    STRIPES = 5
    DEADLINE = 6
    BLUR = 7
    FOG = 8


K = len(DegradationKind)

# JPEG luminance quantization table (ITU T.81 Annex K).
_JPEG_LUMA = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)
JPEG_PROFILE = _JPEG_LUMA / _JPEG_LUMA.mean()


def _cube_op(fn):
    """Lift an array operator to accept HsiCube; handle s == 0 and the output clamp."""

    @functools.wraps(fn)
    def wrapper(cube, s: float, seed: int = 0, **kw):
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"intensity must lie in [0, 1], got {s}")
        values = cube.values if isinstance(cube, HsiCube) else np.asarray(cube, dtype=np.float64)
        if s == 0.0:
            out = values.copy()
        else:
            out = np.clip(fn(values, s, np.random.default_rng(seed), **kw), 0.0, 1.0)
        return cube.with_values(out) if isinstance(cube, HsiCube) else out

    return wrapper


def _pick_bands(c: int, s: float, rng) -> np.ndarray:
    return np.sort(rng.choice(c, size=min(c, math.ceil(s * c / 2)), replace=False))


@_cube_op
def apply_zero_mean_gaussian(x, s, rng, sigma_max: float = 0.2):
    return x + rng.normal(0.0, sigma_max * s, size=x.shape)


@_cube_op
def apply_additive_gaussian(x, s, rng, sigma_max: float = 0.2):
    sigmas = rng.uniform(0.0, sigma_max * s, size=x.shape[-1])
    return x + rng.normal(size=x.shape) * sigmas


@_cube_op
def apply_poisson(x, s, rng, q_clean: float = 1000.0, q_dark: float = 10.0):
    q = q_clean * (1 - s) + q_dark * s
    return rng.poisson(np.maximum(x, 0.0) * q) / q


@_cube_op
def apply_salt_pepper(x, s, rng, prob: float | None = None):
    p = 0.2 * s if prob is None else prob
    hit = rng.random(x.shape) < p
    salt = rng.random(x.shape) < 0.5
    out = x.copy()
    out[hit] = np.where(salt[hit], 1.0, 0.0)
    return out


@_cube_op
def apply_stripes(x, s, rng, period: int = 8, amplitude: float = 0.3):
    out = x.copy()
    bands = _pick_bands(x.shape[2], s, rng)
    phase = int(rng.integers(period))
    cols = np.arange(phase, x.shape[1], period)
    for b in bands:
        out[:, cols, b] += rng.uniform(-amplitude * s, amplitude * s)
    return out


@_cube_op
def apply_deadline(x, s, rng, column_fraction: float = 0.1):
    out = x.copy()
    w = x.shape[1]
    n_cols = min(w, math.ceil(column_fraction * s * w))
    for b in _pick_bands(x.shape[2], s, rng):
        out[:, rng.choice(w, size=n_cols, replace=False), b] = 0.0
    return out


def deadline_mask(shape: tuple[int, int, int], s: float, seed: int, column_fraction: float = 0.1) -> np.ndarray:
    """Boolean (W, C) mask of the (column, band) pairs ``apply_deadline`` zeroes."""
    _, w, c = shape
    mask = np.zeros((w, c), dtype=bool)
    if s == 0:
        return mask
    rng = np.random.default_rng(seed)
    n_cols = min(w, math.ceil(column_fraction * s * w))
    for b in _pick_bands(c, s, rng):
        mask[rng.choice(w, size=n_cols, replace=False), b] = True
    return mask


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


@_cube_op
def apply_blur(x, s, rng, sigma_max: float = 2.0):
    k = gaussian_kernel(sigma_max * s)
    out = correlate1d(x, k, axis=0, mode="mirror")
    return correlate1d(out, k, axis=1, mode="mirror")


@_cube_op
def apply_fog(x, s, rng, airlight: float = 0.9, transmission: float | None = None):
    t = 1.0 - 0.8 * s if transmission is None else transmission
    return t * x + (1.0 - t) * airlight


def jpeg_band_roundtrip(x: np.ndarray, step: float) -> np.ndarray:
    """Blockwise 8x8 DCT quantization of every band of an (H, W, C) array.

    ``step`` is the base quantizer scaled by the normalized luminance
    profile; ``step == 0`` skips quantization.
    """
    h, w, c = x.shape
    ph, pw = -h % 8, -w % 8
    padded = np.pad(x, ((0, ph), (0, pw), (0, 0)), mode="reflect") if ph or pw else x
    hh, ww = padded.shape[:2]
    blocks = padded.reshape(hh // 8, 8, ww // 8, 8, c)
    coef = dctn(blocks, axes=(1, 3), norm="ortho")
    if step > 0:
        q = step * JPEG_PROFILE[None, :, None, :, None]
        coef = np.round(coef / q) * q
    rec = idctn(coef, axes=(1, 3), norm="ortho").reshape(hh, ww, c)
    return rec[:h, :w]


@_cube_op
def apply_jpeg(x, s, rng, base_step: float = 0.02, step_gain: float = 0.3):
    return jpeg_band_roundtrip(x, base_step + step_gain * s)


OPERATORS = {
    DegradationKind.JPEG: apply_jpeg,
    DegradationKind.ZERO_MEAN_GAUSSIAN: apply_zero_mean_gaussian,
    DegradationKind.ADDITIVE_GAUSSIAN: apply_additive_gaussian,
    DegradationKind.POISSON: apply_poisson,
    DegradationKind.SALT_PEPPER: apply_salt_pepper,
    DegradationKind.STRIPES: apply_stripes,
    DegradationKind.DEADLINE: apply_deadline,
    DegradationKind.BLUR: apply_blur,
    DegradationKind.FOG: apply_fog,
}


def apply(kind: DegradationKind, cube, s: float, seed: int = 0):
    return OPERATORS[DegradationKind(kind)](cube, s, seed)


# ---------------------------------------------------------------------------
# composite degradation
# ---------------------------------------------------------------------------


def _splitmix64(v: int) -> int:
    v = (v + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    v = ((v ^ (v >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    v = ((v ^ (v >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return v ^ (v >> 31)


def kind_seed(seed: int, index: int) -> int:
    """Per-operator seed: ``seed XOR hash(index)``."""
    return (int(seed) ^ _splitmix64(int(index))) & 0xFFFFFFFFFFFFFFFF


def sample_dirichlet(k: int, concentration: float = 1.0, seed: int | np.random.Generator = 0) -> np.ndarray:
    if k < 1 or concentration <= 0:
        raise ValueError("need k >= 1 and concentration > 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    g = rng.gamma(concentration, size=k)
    return g / g.sum()


@dataclass(frozen=True)
class DegradationSpec:
    weights: tuple[float, ...]
    intensity: float
    seed: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (K,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ValueError(f"weights must be {K} nonnegative reals summing to 1")
        if not 0 <= self.intensity <= 1:
            raise ValueError(f"intensity must lie in [0, 1], got {self.intensity}")

    @classmethod
    def random(cls, rng: np.random.Generator, concentration: float = 1.0) -> "DegradationSpec":
        w = sample_dirichlet(K, concentration, rng)
        return cls(tuple(w), float(rng.uniform(0.0, 1.0)), int(rng.integers(2**63)))

    def kind_intensities(self) -> np.ndarray:
        return np.minimum(1.0, K * np.asarray(self.weights) * self.intensity)


def apply_composite(cube, spec: DegradationSpec, min_weight: float = 1e-3):
    """Apply kinds in canonical order at ``min(1, K * w_i * rho)``; tiny weights are skipped."""
    out = cube
    for kind, (w, s) in enumerate(zip(spec.weights, spec.kind_intensities())):
        if w < min_weight or s == 0:
            continue
        out = OPERATORS[DegradationKind(kind)](out, float(s), kind_seed(spec.seed, kind))
    if out is cube:
        out = cube.with_values(cube.values.copy()) if isinstance(cube, HsiCube) else np.array(cube, dtype=np.float64)
    return out


# ---------------------------------------------------------------------------
# fixed benchmark suite
# ---------------------------------------------------------------------------

DK = DegradationKind


@dataclass(frozen=True)
class BenchmarkCase:
    label: str
    kinds: tuple[DegradationKind, ...]
    intensity: float = 0.5


_CASES = (
    BenchmarkCase("C-3-1", (DK.DEADLINE, DK.POISSON, DK.SALT_PEPPER)),
    BenchmarkCase("C-3-2", (DK.JPEG, DK.BLUR, DK.FOG)),
    BenchmarkCase("C-3-3", (DK.ADDITIVE_GAUSSIAN, DK.STRIPES, DK.ZERO_MEAN_GAUSSIAN)),
    BenchmarkCase("C-3-4", (DK.POISSON, DK.BLUR, DK.FOG)),
    BenchmarkCase("C-5-1", (DK.DEADLINE, DK.STRIPES, DK.BLUR, DK.SALT_PEPPER, DK.FOG)),
    BenchmarkCase("C-5-2", (DK.JPEG, DK.ADDITIVE_GAUSSIAN, DK.POISSON, DK.ZERO_MEAN_GAUSSIAN, DK.SALT_PEPPER)),
    BenchmarkCase("C-7", tuple(k for k in DK if k not in (DK.ADDITIVE_GAUSSIAN, DK.STRIPES))),
    BenchmarkCase("C-9", tuple(DK)),
)


def benchmark_suite() -> list[BenchmarkCase]:
    return list(_CASES)


def get_case(label: str) -> BenchmarkCase:
    for case in _CASES:
        if case.label == label:
            return case
    raise KeyError(f"unknown benchmark case {label!r}; expected one of {[c.label for c in _CASES]}")


def apply_case(cube, case: BenchmarkCase | str, seed: int = 0):
    """Apply a benchmark case: listed kinds in order, each at the case intensity."""
    if isinstance(case, str):
        case = get_case(case)
    out = cube
    for pos, kind in enumerate(case.kinds):
        out = OPERATORS[kind](out, case.intensity, kind_seed(seed, 16 * pos + int(kind)))
    return out


def degradation_stats(clean: np.ndarray, degraded: np.ndarray) -> dict:
    """Per-band MSE against the input and the fraction of changed elements."""
    diff = degraded - clean
    return {
        "band_mse": (diff**2).mean(axis=(0, 1)),
        "corrupted_fraction": float(np.mean(diff != 0)),
    }
