"""Three-stage training and evaluation: embedding -> diffusion head -> classifier.

Each stage consumes frozen outputs of the previous one. Functions here are
used both by the CLI (stage by stage, through files) and in-process.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import classify, diagnostics, diffuse, embed
from .config import RunConfig
from .degrade import DegradationSpec, apply_case, apply_composite, get_case
from .hsidata import HsiCube, SplitSpec, extract_patches, split_pixels

log = logging.getLogger(__name__)

FEATURE_MODES = ("diffusion", "manifold", "raw")


def embed_config(cfg: RunConfig, bands: int, n_classes: int) -> embed.EmbedConfig:
    return embed.EmbedConfig(
        patch_size=cfg.patch_size, stride=cfg.stride, bands=bands, embed_dim=cfg.embed_dim, rank=cfg.rank,
        layers=cfg.layers, heads=cfg.heads, ffn_mult=cfg.ffn_mult, lambda_cls=cfg.lambda_cls, n_classes=n_classes,
    )


def head_config(cfg: RunConfig, dim: int) -> diffuse.HeadConfig:
    return diffuse.HeadConfig(dim=dim, hidden_mult=cfg.diff_hidden_mult,
                              time=diffuse.TimeEmbedding(n_freqs=cfg.time_freqs))


def make_split(cube: HsiCube, cfg: RunConfig):
    spec = SplitSpec(cfg.train_fraction, cfg.val_fraction, cfg.test_fraction, seed=cfg.seed)
    return split_pixels(cube.labels, spec)


def labels_at(cube: HsiCube, coords: np.ndarray) -> np.ndarray:
    """0-based class indices at (row, col) coordinates."""
    return cube.labels[coords[:, 0], coords[:, 1]] - 1


def training_views(cube: HsiCube, coords: np.ndarray, cfg: RunConfig, seed: int):
    """Clean patches plus ``cfg.views`` independently degraded copies, with labels."""
    clean = extract_patches(cube, coords, cfg.patch_size)
    labels = labels_at(cube, coords)
    rng = np.random.default_rng(seed)
    views = [clean]
    for _ in range(cfg.views):
        views.append(np.stack([apply_composite(p, DegradationSpec.random(rng, cfg.dirichlet_alpha)) for p in clean]))
    return np.concatenate(views), np.tile(labels, cfg.views + 1)


@dataclass
class Models:
    embed_params: dict
    embed_cfg: embed.EmbedConfig
    head_params: dict | None = None
    head_cfg: diffuse.HeadConfig | None = None
    t_star: float = diffuse.DEFAULT_T_STAR


def features(patches: np.ndarray, models: Models, mode: str = "diffusion", t_star: float | None = None) -> np.ndarray:
    """Classifier inputs for each patch.

    ``diffusion``: refined coordinate; ``manifold``: raw coordinate
    (no diffusion); ``raw``: the centre-pixel spectrum (no manifold).
    """
    if mode == "raw":
        c = patches.shape[1] // 2
        return patches[:, c, c, :].copy()
    u = embed.encode_batched(patches, models.embed_params, models.embed_cfg)
    if mode == "manifold":
        return u
    if mode != "diffusion":
        raise ValueError(f"unknown feature mode {mode!r}")
    if models.head_params is None:
        raise ValueError("diffusion features need a trained diffusion head")
    if models.head_cfg.dim != models.embed_cfg.embed_dim:
        raise ValueError(f"diffusion head width {models.head_cfg.dim} != embedding width {models.embed_cfg.embed_dim}")
    return diffuse.refine(u, models.t_star if t_star is None else t_star, models.head_params, models.head_cfg)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def stage_embed(cube: HsiCube, train: np.ndarray, cfg: RunConfig):
    ecfg = embed_config(cfg, cube.bands, cube.n_classes)
    patches = extract_patches(cube, train, cfg.patch_size)
    params, hist = embed.train_embed(
        patches, labels_at(cube, train), ecfg, epochs=cfg.epochs, seed=cfg.seed, batch_size=cfg.batch_size,
        lr=cfg.lr, weight_decay=cfg.weight_decay, concentration=cfg.dirichlet_alpha,
    )
    return params, ecfg, hist


def stage_latents(cube: HsiCube, train: np.ndarray, models: Models, cfg: RunConfig, degraded: bool):
    """Manifold coordinates of the training patches, clean or with degraded views."""
    if degraded:
        patches, labels = training_views(cube, train, cfg, seed=cfg.seed + 101)
    else:
        patches, labels = extract_patches(cube, train, cfg.patch_size), labels_at(cube, train)
    return embed.encode_batched(patches, models.embed_params, models.embed_cfg), labels


def stage_diffusion(latents: np.ndarray, cfg: RunConfig):
    hcfg = head_config(cfg, latents.shape[1])
    params, hist = diffuse.train_diffusion(
        latents, hcfg, epochs=cfg.diff_epochs, seed=cfg.seed + 2, batch_size=cfg.diff_batch_size, lr=cfg.lr,
        weight_decay=cfg.weight_decay, lambda_x=cfg.lambda_x,
    )
    return params, hcfg, hist


def stage_classifier(cube: HsiCube, train: np.ndarray, models: Models, cfg: RunConfig, mode: str = "diffusion",
                     views=None):
    patches, labels = views if views is not None else training_views(cube, train, cfg, seed=cfg.seed + 202)
    feats = features(patches, models, mode)
    params, hist = classify.train_classifier(
        feats, labels, cube.n_classes, epochs=cfg.cls_epochs, seed=cfg.seed + 3, batch_size=cfg.cls_batch_size,
        lr=cfg.lr, weight_decay=cfg.weight_decay, hidden=2 * cfg.embed_dim,
    )
    return params, hist


def degraded_values(cube: HsiCube, case: str | None, seed: int) -> np.ndarray:
    if case is None or case == "none":
        return cube.values
    return apply_case(cube.values, get_case(case), seed)


def evaluate(cube: HsiCube, coords: np.ndarray, models: Models, cls_params: dict, mode: str = "diffusion",
             case: str | None = None, seed: int = 0):
    """Degrade the whole cube (optionally), classify the patches at ``coords``; returns (report, cm)."""
    values = degraded_values(cube, case, seed)
    patches = extract_patches(values, coords, models.embed_cfg.patch_size)
    pred = classify.predict(features(patches, models, mode), cls_params)
    cm = classify.confusion(pred, labels_at(cube, coords), cube.n_classes)
    return classify.metrics(cm), cm


def id_report(cube: HsiCube, coords: np.ndarray, models: Models, cases, n: int = 1000, seed: int = 0):
    """Rows of (case, stage, d_hat); a failing estimate yields nan for that row only."""
    rng = np.random.default_rng(seed)
    pick = coords[np.sort(rng.choice(len(coords), size=min(n, len(coords)), replace=False))]
    rows = []
    for case in cases:
        values = degraded_values(cube, case, seed)
        patches = extract_patches(values, pick, models.embed_cfg.patch_size)
        u_raw = embed.encode_batched(patches, models.embed_params, models.embed_cfg)
        sets = {
            "degraded-raw": patches.reshape(len(patches), -1),
            "manifold": u_raw,
            "diffusion-refined": diffuse.refine(u_raw, models.t_star, models.head_params, models.head_cfg),
        }
        for stage in diagnostics.STAGES:
            try:
                d = diagnostics.twonn_id(sets[stage])
            except (ValueError, RuntimeError) as exc:
                log.warning("id %s/%s failed: %s", case, stage, exc)
                d = float("nan")
            rows.append((case, stage, d))
    return rows


def format_id_rows(rows) -> str:
    return "case,stage,id\n" + "".join(f"{c},{s},{d:.6f}\n" for c, s, d in rows)


# ---------------------------------------------------------------------------
# whole run
# ---------------------------------------------------------------------------


@dataclass
class PipelineResult:
    models: Models
    classifiers: dict  # mode -> params
    split: tuple
    histories: dict


def run_pipeline(cube: HsiCube, cfg: RunConfig, modes=FEATURE_MODES) -> PipelineResult:
    train, val, test = make_split(cube, cfg)
    e_params, e_cfg, e_hist = stage_embed(cube, train, cfg)
    models = Models(e_params, e_cfg, t_star=cfg.t_star)
    latents, _ = stage_latents(cube, train, models, cfg, degraded=cfg.diff_latents == "degraded")
    models.head_params, models.head_cfg, d_hist = stage_diffusion(latents, cfg)
    views = training_views(cube, train, cfg, seed=cfg.seed + 202)
    classifiers, c_hist = {}, {}
    for mode in modes:
        classifiers[mode], c_hist[mode] = stage_classifier(cube, train, models, cfg, mode, views=views)
    return PipelineResult(models, classifiers, (train, val, test),
                          {"embed": e_hist, "diffusion": d_hist, **{f"cls.{m}": h for m, h in c_hist.items()}})
