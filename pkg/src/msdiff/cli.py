"""``msdiff`` command-line front end.

Stages communicate through files: cube (HSC1) -> embed checkpoint -> latents
(MSLT) -> diffusion-head checkpoint -> classifier checkpoint. Every command
that writes outputs also writes ``<output>.manifest.json``.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import classify, diagnostics, diffuse, embed, pipeline
from . import numkit as nk
from .config import ConfigError, RunConfig, load_config
from .degrade import DegradationSpec, K, apply_case, apply_composite, degradation_stats, get_case
from .hsidata import CubeFormatError, extract_patches, read_cube, synth_cube, write_cube

log = logging.getLogger("msdiff")

EXIT_ERROR, EXIT_USAGE, EXIT_STAGE = 1, 2, 3


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_ERROR):
        super().__init__(message)
        self.kind = kind
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", f"{self.prog}: {message}", EXIT_USAGE)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


class Manifest:
    def __init__(self, command: str, cfg: RunConfig | None, argv):
        self.data = {"command": command, "argv": list(argv),
                     "config": dataclasses.asdict(cfg) if cfg is not None else None,
                     "seeds": {}, "inputs": {}, "checkpoints": {}, "outputs": {}, "wall_clock_s": {}}

    @contextlib.contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        yield
        self.data["wall_clock_s"][name] = round(time.perf_counter() - t0, 6)

    def input(self, path):
        if path is not None:
            self.data["inputs"][str(path)] = nk.digest(path)

    def output(self, path, checkpoint: bool = False):
        self.data["outputs"][str(path)] = nk.digest(path)
        if checkpoint:
            self.data["checkpoints"][str(path)] = self.data["outputs"][str(path)]

    def write(self, anchor) -> Path:
        path = Path(f"{anchor}.manifest.json")
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _require(path, stage: str, command: str):
    if path is None or not Path(path).is_file():
        what = "no path given" if path is None else f"{path} not found"
        raise CliError("stage-order", f"{command} requires the {stage} stage output ({what}); run {stage} first",
                       EXIT_STAGE)
    return Path(path)


def _load_embed(path, command):
    params, ecfg = embed.from_checkpoint(nk.load_params(_require(path, "train-embed", command)))
    return params, ecfg


def _load_head(path, command):
    return diffuse.from_checkpoint(nk.load_params(_require(path, "train-diffusion", command)))


def _models(args, command, need_head=True) -> pipeline.Models:
    e_params, ecfg = _load_embed(args.ckpt_embed, command)
    models = pipeline.Models(e_params, ecfg)
    if need_head:
        models.head_params, models.head_cfg, models.t_star = _load_head(args.ckpt_diff, command)
    return models


def _split_coords(cube, cfg, which: str):
    return dict(zip(("train", "val", "test"), pipeline.make_split(cube, cfg)))[which]


def _read_data(path):
    cube = read_cube(path)
    if cube.labels is None:
        raise CliError("data", f"{path}: cube has no label map")
    return cube


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args, m: Manifest):
    cfg = load_config(args.config) if args.config else RunConfig()
    seed = cfg.data_seed if args.seed is None else args.seed
    m.data["seeds"]["data"] = seed
    with m.stage("synth"):
        cube = synth_cube(cfg.height, cfg.width, cfg.bands, cfg.n_classes, seed=seed)
        write_cube(cube, args.out)
    m.output(args.out)
    print(f"wrote {args.out} ({cube.height}x{cube.width}x{cube.bands}, {cube.n_classes} classes)")
    return args.out


def cmd_degrade(args, m: Manifest):
    if (args.case is None) == (args.weights is None):
        raise CliError("usage", "degrade needs exactly one of --case or --weights", EXIT_USAGE)
    cube = read_cube(args.input)
    m.input(args.input)
    m.data["seeds"]["degrade"] = args.seed
    with m.stage("degrade"):
        if args.case is not None:
            try:
                case = get_case(args.case)
            except KeyError as exc:
                raise CliError("usage", str(exc.args[0]), EXIT_USAGE) from None
            values = apply_case(cube.values, case, args.seed)
        else:
            weights = np.array([float(w) for w in args.weights.split(",")])
            if len(weights) != K:
                raise CliError("usage", f"--weights needs {K} comma-separated values, got {len(weights)}", EXIT_USAGE)
            values = apply_composite(cube.values, DegradationSpec(weights, args.rho, args.seed))
        write_cube(cube.with_values(values), args.out)
    m.output(args.out)
    if args.stats:
        stats = degradation_stats(cube.values, values)
        for c, mse in enumerate(stats["band_mse"]):
            print(f"band={c} mse={mse:.6e}")
        print(f"corrupted_fraction={stats['corrupted_fraction']:.6f}")
    return args.out


def cmd_train_embed(args, m: Manifest):
    cfg = _config(args)
    cube = _read_data(args.data)
    m.input(args.data)
    m.data["seeds"].update(split=cfg.seed, embed=cfg.seed)
    train = _split_coords(cube, cfg, "train")
    with m.stage("train-embed"):
        params, ecfg, hist = pipeline.stage_embed(cube, train, cfg)
    nk.save_params(embed.to_checkpoint(params, ecfg), args.out)
    m.output(args.out, checkpoint=True)
    m.data["history"] = dataclasses.asdict(hist)
    print(f"embed loss epoch 1 {hist.loss[0]:.5f} -> epoch {len(hist.loss)} {hist.loss[-1]:.5f}")
    return args.out


def cmd_extract_latents(args, m: Manifest):
    cfg = _config(args)
    cube = _read_data(args.data)
    models = _models(args, "extract-latents", need_head=False)
    m.input(args.data)
    m.data["checkpoints"][str(args.ckpt_embed)] = nk.digest(args.ckpt_embed)
    degraded = args.degraded or cfg.diff_latents == "degraded"
    m.data["seeds"].update(split=cfg.seed, views=cfg.seed + 101 if degraded else None)
    with m.stage("extract-latents"):
        latents, labels = pipeline.stage_latents(cube, _split_coords(cube, cfg, "train"), models, cfg, degraded)
        diffuse.write_latents(latents, labels + 1, args.out)
    m.output(args.out)
    print(f"wrote {len(latents)} latents of width {latents.shape[1]}")
    return args.out


def cmd_train_diffusion(args, m: Manifest):
    cfg = _config(args)
    _, ecfg = _load_embed(args.ckpt_embed, "train-diffusion")
    m.data["checkpoints"][str(args.ckpt_embed)] = nk.digest(args.ckpt_embed)
    latents, _ = diffuse.read_latents(args.latents)
    m.input(args.latents)
    if latents.shape[1] != ecfg.embed_dim:
        raise CliError("shape", f"latent width {latents.shape[1]} != embedding width {ecfg.embed_dim}")
    m.data["seeds"]["diffusion"] = cfg.seed + 2
    with m.stage("train-diffusion"):
        params, hcfg, hist = pipeline.stage_diffusion(latents, cfg)
    nk.save_params(diffuse.to_checkpoint(params, hcfg, cfg.t_star), args.out)
    m.output(args.out, checkpoint=True)
    m.data["history"] = dataclasses.asdict(hist)
    print(f"diffusion loss epoch 1 {hist.loss[0]:.5f} -> epoch {len(hist.loss)} {hist.loss[-1]:.5f}")
    return args.out


def _classifier_checkpoint(params, mode: str, n_classes: int):
    out = dict(params)
    out["meta.features"] = nk.Tensor(float(pipeline.FEATURE_MODES.index(mode)))
    out["meta.n_classes"] = nk.Tensor(float(n_classes))
    return out


def _load_classifier(path, command):
    ckpt = nk.load_params(_require(path, "train-classifier", command))
    if "meta.features" not in ckpt:
        raise CliError("format", f"{path}: not a classifier checkpoint")
    mode = pipeline.FEATURE_MODES[int(ckpt["meta.features"].item())]
    return {k: v for k, v in ckpt.items() if not k.startswith("meta.")}, mode


def cmd_train_classifier(args, m: Manifest):
    cfg = _config(args)
    cube = _read_data(args.data)
    models = _models(args, "train-classifier")
    m.input(args.data)
    for ck in (args.ckpt_embed, args.ckpt_diff):
        m.data["checkpoints"][str(ck)] = nk.digest(ck)
    m.data["seeds"].update(split=cfg.seed, views=cfg.seed + 202, classifier=cfg.seed + 3)
    with m.stage("train-classifier"):
        params, hist = pipeline.stage_classifier(cube, _split_coords(cube, cfg, "train"), models, cfg, args.features)
    nk.save_params(_classifier_checkpoint(params, args.features, cube.n_classes), args.out)
    m.output(args.out, checkpoint=True)
    m.data["history"] = hist
    print(f"classifier ({args.features}) loss epoch 1 {hist[0]:.5f} -> epoch {len(hist)} {hist[-1]:.5f}")
    return args.out


def cmd_evaluate(args, m: Manifest):
    cfg = _config(args)
    cube = _read_data(args.data)
    models = _models(args, "evaluate")
    cls_params, mode = _load_classifier(args.ckpt_cls, "evaluate")
    if args.t_star is not None:
        models.t_star = args.t_star
    seed = cfg.seed if args.degrade_seed is None else args.degrade_seed
    case = args.case or "none"
    if case != "none":
        try:
            get_case(case)
        except KeyError as exc:
            raise CliError("usage", str(exc.args[0]), EXIT_USAGE) from None
    with m.stage("evaluate"):
        report, cm = pipeline.evaluate(cube, _split_coords(cube, cfg, args.split), models, cls_params, mode, case,
                                       seed)
    print(classify.format_table(report, case))
    print(report.line(case))
    if args.dump_cm:
        Path(args.dump_cm).write_text(classify.cm_to_csv(cm), encoding="utf-8")
        m.input(args.data)
        for ck in (args.ckpt_embed, args.ckpt_diff, args.ckpt_cls):
            m.data["checkpoints"][str(ck)] = nk.digest(ck)
        m.data["seeds"].update(split=cfg.seed, degrade=seed)
        m.data["metrics"] = report.line(case)
        m.output(args.dump_cm)
        return args.dump_cm
    return None


def cmd_id(args, m: Manifest):
    cfg = _config(args)
    cube = _read_data(args.data)
    models = _models(args, "id")
    cases = [c.strip() for c in args.cases.split(",") if c.strip()]
    for c in cases:
        if c != "none":
            try:
                get_case(c)
            except KeyError as exc:
                raise CliError("usage", str(exc.args[0]), EXIT_USAGE) from None
    with m.stage("id"):
        rows = pipeline.id_report(cube, _split_coords(cube, cfg, args.split), models, cases, args.n, cfg.seed)
    text = pipeline.format_id_rows(rows)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        m.input(args.data)
        for ck in (args.ckpt_embed, args.ckpt_diff):
            m.data["checkpoints"][str(ck)] = nk.digest(ck)
        m.data["seeds"]["id"] = cfg.seed
        m.output(args.out)
        return args.out
    return None


def cmd_export(args, m: Manifest):
    cfg = _config(args)
    cube = _read_data(args.data)
    need_head = args.stage == "diffusion-refined"
    models = _models(args, "export", need_head=need_head)
    coords = _split_coords(cube, cfg, args.split)
    with m.stage("export"):
        values = pipeline.degraded_values(cube, args.case, cfg.seed)
        patches = extract_patches(values, coords, models.embed_cfg.patch_size)
        if args.stage == "degraded-raw":
            pts = patches.reshape(len(patches), -1)
        else:
            pts = pipeline.features(patches, models, "diffusion" if need_head else "manifold")
        diagnostics.export_embeddings(pts, pipeline.labels_at(cube, coords) + 1, args.out)
    m.input(args.data)
    m.data["checkpoints"][str(args.ckpt_embed)] = nk.digest(args.ckpt_embed)
    if need_head:
        m.data["checkpoints"][str(args.ckpt_diff)] = nk.digest(args.ckpt_diff)
    m.data["seeds"].update(split=cfg.seed, degrade=cfg.seed)
    m.output(args.out)
    print(f"wrote {len(pts)} rows of width {pts.shape[1]} to {args.out}")
    return args.out


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="msdiff", description="Composite-degradation robust hyperspectral classification pipeline.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, fn, help_text, config=True, seed=True):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.set_defaults(func=fn)
        if config:
            sp.add_argument("--config", help="key=value run configuration file")
        if seed:
            sp.add_argument("--seed", type=int, help="overrides the config seed")
        return sp

    sp = cmd("synth", cmd_synth, "write a synthetic labelled cube (HSC1)")
    sp.add_argument("--out", required=True)

    sp = cmd("degrade", cmd_degrade, "apply a benchmark case or a weighted composite degradation", config=False,
             seed=False)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--case", help="benchmark label, e.g. C-9")
    sp.add_argument("--weights", help=f"{K} comma-separated mixing weights summing to 1")
    sp.add_argument("--rho", type=float, default=0.5, help="global intensity in [0, 1]")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--stats", action="store_true", help="print per-band MSE and corrupted fraction")

    sp = cmd("train-embed", cmd_train_embed, "train the manifold embedding network")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)

    sp = cmd("extract-latents", cmd_extract_latents, "encode training patches with a frozen embedding (MSLT)")
    sp.add_argument("--data", required=True)
    sp.add_argument("--ckpt-embed")
    sp.add_argument("--degraded", action="store_true", help="include degraded views")
    sp.add_argument("--out", required=True)

    sp = cmd("train-diffusion", cmd_train_diffusion, "train the diffusion head on frozen latents")
    sp.add_argument("--latents", required=True)
    sp.add_argument("--ckpt-embed")
    sp.add_argument("--out", required=True)

    sp = cmd("train-classifier", cmd_train_classifier, "train the classifier on frozen features")
    sp.add_argument("--data", required=True)
    sp.add_argument("--ckpt-embed")
    sp.add_argument("--ckpt-diff")
    sp.add_argument("--features", choices=pipeline.FEATURE_MODES, default="diffusion")
    sp.add_argument("--out", required=True)

    sp = cmd("evaluate", cmd_evaluate, "classify split pixels of an optionally degraded cube")
    sp.add_argument("--data", required=True)
    sp.add_argument("--ckpt-embed")
    sp.add_argument("--ckpt-diff")
    sp.add_argument("--ckpt-cls")
    sp.add_argument("--case", default="none", help="benchmark label or none")
    sp.add_argument("--split", choices=("train", "val", "test"), default="test")
    sp.add_argument("--degrade-seed", type=int, help="degradation seed (defaults to the run seed)")
    sp.add_argument("--t-star", type=float, help="override the refinement time")
    sp.add_argument("--dump-cm", help="write the confusion matrix as CSV")

    sp = cmd("id", cmd_id, "TwoNN intrinsic dimension per case and stage (CSV)")
    sp.add_argument("--data", required=True)
    sp.add_argument("--ckpt-embed")
    sp.add_argument("--ckpt-diff")
    sp.add_argument("--cases", default="C-3-3,C-5-1,C-7,C-9")
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--split", choices=("train", "val", "test"), default="test")
    sp.add_argument("--out")

    sp = cmd("export", cmd_export, "export per-pixel representations as CSV for external visualization")
    sp.add_argument("--data", required=True)
    sp.add_argument("--ckpt-embed")
    sp.add_argument("--ckpt-diff")
    sp.add_argument("--stage", choices=diagnostics.STAGES, default="diffusion-refined")
    sp.add_argument("--case", default="none")
    sp.add_argument("--split", choices=("train", "val", "test"), default="test")
    sp.add_argument("--out", required=True)
    return p


def _error_line(kind: str, message: str) -> str:
    return f"error kind={kind} message={json.dumps(' '.join(str(message).split()))}"


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        m = Manifest(args.command, _config(args) if hasattr(args, "config") else None, argv)
        out = args.func(args, m)
        if out is not None:
            m.write(out)
        return 0
    except CliError as exc:
        print(_error_line(exc.kind, exc), file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(_error_line("config", exc), file=sys.stderr)
        return EXIT_USAGE
    except (CubeFormatError, nk.CheckpointError, diffuse.LatentFormatError) as exc:
        print(_error_line("format", exc), file=sys.stderr)
        return EXIT_ERROR
    except FileNotFoundError as exc:
        print(_error_line("io", f"{exc.filename}: not found"), file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, FloatingPointError, OSError) as exc:
        print(_error_line(type(exc).__name__, exc), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
