"""Intrinsic-dimensionality estimation (TwoNN) and embedding export."""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

log = logging.getLogger(__name__)

STAGES = ("degraded-raw", "manifold", "diffusion-refined")


def two_nearest(points: np.ndarray, chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Exact first and second nearest-neighbour distances by brute force."""
    n = len(points)
    r1 = np.empty(n)
    r2 = np.empty(n)
    for lo in range(0, n, chunk):
        d = cdist(points[lo:lo + chunk], points)
        rows = np.arange(d.shape[0])
        d[rows, lo + rows] = np.inf
        part = np.partition(d, 1, axis=1)
        r1[lo:lo + chunk] = part[:, 0]
        r2[lo:lo + chunk] = part[:, 1]
    return r1, r2


def twonn_id(points, trim: float = 0.1) -> float:
    """TwoNN intrinsic dimension from mu = r2 / r1.

    The largest ``trim`` fraction of ratios is treated as right-censored at
    the cut-off, which keeps the maximum-likelihood estimate
    ``n_kept / (sum log mu_kept + n_cut * log mu_cut)`` unbiased for the
    Pareto law of mu.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"expected an (n, d) point set, got shape {pts.shape}")
    uniq = np.unique(pts, axis=0)
    if len(uniq) < len(pts):
        log.warning("twonn_id: dropped %d duplicate points", len(pts) - len(uniq))
    if len(uniq) < 10:
        raise ValueError(f"need at least 10 distinct points, got {len(uniq)}")
    r1, r2 = two_nearest(uniq)
    if np.any(r1 <= 0):
        raise RuntimeError("zero first-neighbour distance after deduplication")
    log_mu = np.sort(np.log(r2 / r1))
    n_keep = len(log_mu) - int(np.floor(trim * len(log_mu)))
    n_cut = len(log_mu) - n_keep
    cut = log_mu[n_keep - 1]
    return float(n_keep / (log_mu[:n_keep].sum() + n_cut * cut))


def export_embeddings(latents: np.ndarray, labels, path) -> None:
    latents = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels)
    if len(latents) != len(labels):
        raise ValueError(f"{len(latents)} latents but {len(labels)} labels")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{i}" for i in range(latents.shape[1])])
        for lab, row in zip(labels, latents):
            w.writerow([int(lab)] + [f"{v:.9g}" for v in row])


def read_embeddings(path) -> tuple[np.ndarray, np.ndarray]:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    labels = np.array([int(r[0]) for r in body], dtype=np.int64)
    values = np.array([[float(v) for v in r[1:]] for r in body]).reshape(len(body), len(rows[0]) - 1)
    return values, labels
