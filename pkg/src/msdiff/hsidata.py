"""Hyperspectral cubes: HSC file I/O, normalization, patches, splits, synthetic scenes."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

HSC_MAGIC = b"HSC1"


class CubeFormatError(ValueError):
    pass


@dataclass
class HsiCube:
    """H x W x C reflectance cube with an optional H x W label map (0 = unlabeled)."""

    values: np.ndarray
    labels: np.ndarray | None = None
    band_range: np.ndarray | None = None  # (C, 2) min/max recorded by normalize

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError(f"cube values must be H x W x C, got shape {self.values.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != self.values.shape[:2]:
                raise ValueError(f"label map {self.labels.shape} does not match cube {self.values.shape[:2]}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    @property
    def n_classes(self) -> int:
        return 0 if self.labels is None else int(self.labels.max())

    def with_values(self, values: np.ndarray) -> "HsiCube":
        return replace(self, values=values)


# ---------------------------------------------------------------------------
# HSC format
# ---------------------------------------------------------------------------


def write_cube(cube: HsiCube, path) -> None:
    """Values are stored as little-endian f32 (row, col, band order)."""
    h, w, c = cube.values.shape
    parts = [HSC_MAGIC, struct.pack("<III", h, w, c), cube.values.astype("<f4").tobytes()]
    if cube.labels is not None:
        if cube.labels.min() < 0 or cube.labels.max() > 0xFFFF:
            raise ValueError("labels must fit in u16")
        parts += [b"\x01", cube.labels.astype("<u2").tobytes()]
    else:
        parts.append(b"\x00")
    Path(path).write_bytes(b"".join(parts))


def read_cube(path) -> HsiCube:
    buf = Path(path).read_bytes()
    if len(buf) < 16:
        raise CubeFormatError(f"{path}: header needs 16 bytes, file has {len(buf)}")
    if buf[:4] != HSC_MAGIC:
        raise CubeFormatError(f"{path}: bad magic {buf[:4]!r} at byte 0, expected {HSC_MAGIC!r}")
    h, w, c = struct.unpack("<III", buf[4:16])
    n = h * w * c
    end_values = 16 + 4 * n
    if len(buf) < end_values + 1:
        raise CubeFormatError(
            f"{path}: truncated at byte {len(buf)}: expected at least {end_values + 1} bytes "
            f"for a {h}x{w}x{c} cube, got {len(buf)}"
        )
    values = np.frombuffer(buf, dtype="<f4", count=n, offset=16).reshape(h, w, c).astype(np.float64)
    flag = buf[end_values]
    labels = None
    expected = end_values + 1
    if flag == 1:
        expected += 2 * h * w
        if len(buf) < expected:
            raise CubeFormatError(
                f"{path}: truncated label block at byte {len(buf)}: expected {expected} bytes, got {len(buf)}"
            )
        labels = np.frombuffer(buf, dtype="<u2", count=h * w, offset=end_values + 1).reshape(h, w).astype(np.int64)
    elif flag != 0:
        raise CubeFormatError(f"{path}: bad label flag {flag} at byte {end_values}")
    if len(buf) != expected:
        raise CubeFormatError(f"{path}: expected {expected} bytes, got {len(buf)} (trailing data at byte {expected})")
    return HsiCube(values, labels)


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------


def normalize(cube: HsiCube) -> HsiCube:
    """Per-band min-max scaling to [0, 1]; constant bands map to 0."""
    v = cube.values
    if not np.all(np.isfinite(v)):
        raise ValueError("cube contains non-finite values")
    lo = v.min(axis=(0, 1))
    hi = v.max(axis=(0, 1))
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (v - lo) / safe, 0.0)
    return replace(cube, values=out, band_range=np.stack([lo, hi], axis=1))


def _check_patch_size(p: int):
    if p < 1 or p % 2 == 0:
        raise ValueError(f"patch size must be odd and positive, got {p}")


def pad_reflect(values: np.ndarray, p: int) -> np.ndarray:
    r = p // 2
    return np.pad(values, ((r, r), (r, r), (0, 0)), mode="reflect") if r else values


def extract_patch(cube, row: int, col: int, p: int) -> np.ndarray:
    """P x P x C window centred on (row, col), mirror-reflected at the borders."""
    _check_patch_size(p)
    values = cube.values if isinstance(cube, HsiCube) else cube
    h, w, _ = values.shape
    if not (0 <= row < h and 0 <= col < w):
        raise ValueError(f"({row}, {col}) outside {h}x{w} cube")
    r = p // 2
    rows = _reflect_index(np.arange(row - r, row + r + 1), h)
    cols = _reflect_index(np.arange(col - r, col + r + 1), w)
    return values[np.ix_(rows, cols)].copy()


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def extract_patches(cube, coords: np.ndarray, p: int) -> np.ndarray:
    """Batched ``extract_patch``: (n, 2) coordinates -> (n, P, P, C)."""
    _check_patch_size(p)
    values = cube.values if isinstance(cube, HsiCube) else cube
    h, w, _ = values.shape
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    offs = np.arange(p) - p // 2
    rows = _reflect_index(coords[:, 0, None] + offs, h)
    cols = _reflect_index(coords[:, 1, None] + offs, w)
    return values[rows[:, :, None], cols[:, None, :]]


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.1
    val_fraction: float = 0.1
    test_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(not 0 < f < 1 for f in fr) or abs(sum(fr) - 1) > 1e-9:
            raise ValueError(f"split fractions must lie in (0, 1) and sum to 1, got {fr}")


def split_pixels(labels: np.ndarray, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stratified train/val/test split of labeled pixel coordinates.

    Per class, train and val counts are ``floor(fraction * n)``; the remainder
    goes to test. Each returned array is (n, 2) of (row, col), sorted by class
    then by draw order.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(spec.seed)
    parts: tuple[list, list, list] = ([], [], [])
    for cls in np.unique(labels[labels > 0]):
        coords = np.argwhere(labels == cls)
        n = len(coords)
        if n < 3:
            raise ValueError(f"class {cls} has {n} labeled pixels; at least 3 are required")
        coords = coords[rng.permutation(n)]
        n_train = math.floor(spec.train_fraction * n + 1e-9)
        n_val = math.floor(spec.val_fraction * n + 1e-9)
        parts[0].append(coords[:n_train])
        parts[1].append(coords[n_train:n_train + n_val])
        parts[2].append(coords[n_train + n_val:])
    return tuple(np.concatenate(p) if p else np.zeros((0, 2), np.int64) for p in parts)


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------


def class_signatures(n_classes: int, bands: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth spectra: each a sum of 2-4 Gaussian bumps over the band axis."""
    axis = np.arange(bands, dtype=np.float64)
    sigs = np.zeros((n_classes, bands))
    for k in range(n_classes):
        for _ in range(rng.integers(2, 5)):
            centre = rng.uniform(0, bands - 1)
            width = rng.uniform(bands / 10, bands / 4)
            sigs[k] += rng.uniform(0.3, 1.0) * np.exp(-0.5 * ((axis - centre) / width) ** 2)
    return sigs


def synth_cube(height: int = 100, width: int = 100, bands: int = 16, n_classes: int = 4, seed: int = 0,
               jitter: float = 0.02, sites_per_class: int = 3) -> HsiCube:
    """Voronoi scene with one smooth spectral signature per class, normalized."""
    if n_classes < 2 or bands < 4:
        raise ValueError("synth_cube needs n_classes >= 2 and bands >= 4")
    rng = np.random.default_rng(seed)
    n_sites = n_classes * sites_per_class
    # distinct sites so every region (and therefore every class) owns its site pixel
    flat = rng.choice(height * width, size=n_sites, replace=False)
    sites = np.stack([flat // width, flat % width], axis=1)
    site_class = np.arange(n_sites) % n_classes + 1
    rr, cc = np.mgrid[0:height, 0:width]
    d2 = (rr[..., None] - sites[:, 0]) ** 2 + (cc[..., None] - sites[:, 1]) ** 2
    labels = site_class[np.argmin(d2, axis=-1)]
    sigs = class_signatures(n_classes, bands, rng)
    values = sigs[labels - 1] + jitter * rng.normal(size=(height, width, bands))
    return normalize(HsiCube(values, labels))
