"""``key=value`` run configuration shared by every pipeline stage."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # synthetic scene (synth command)
    height: int = 100
    width: int = 100
    bands: int = 16
    n_classes: int = 4
    data_seed: int = 0
    # split
    train_fraction: float = 0.1
    val_fraction: float = 0.1
    test_fraction: float = 0.8
    # embedding network
    patch_size: int = 9
    stride: int = 3
    embed_dim: int = 64
    rank: int = 8
    layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    lambda_cls: float = 0.1
    dirichlet_alpha: float = 1.0
    lr: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 20
    batch_size: int = 32
    # diffusion head
    diff_epochs: int = 20
    diff_batch_size: int = 64
    diff_hidden_mult: int = 4
    time_freqs: int = 16
    lambda_x: float = 1.0
    t_star: float = 0.25
    diff_latents: str = "clean"
    # classifier
    cls_epochs: int = 20
    cls_batch_size: int = 64
    views: int = 4
    # evaluation / diagnostics
    id_samples: int = 1000
    seed: int = 0

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


_TYPES = {f.name: f.type for f in fields(RunConfig)}
_CASTS = {"int": int, "float": float, "str": str}


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _CASTS[_TYPES[key]](value)
        except ValueError:
            raise ConfigError(f"line {lineno}: {key} expects {_TYPES[key]}, got {value!r}") from None
    return dataclasses.replace(base or RunConfig(), **values)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def serialize_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name}={getattr(cfg, f.name)!r}\n".replace("'", "") for f in fields(cfg))
