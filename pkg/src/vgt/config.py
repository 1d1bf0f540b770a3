"""Plain-text key-value run configuration.

One `key = value` assignment per line; blank lines and `#` comments are
ignored. Unknown keys, unparseable values, and invariant violations are
errors that name the offending key and line number. Defaults follow the
reference hyperparameters: patch 16, grid channels 64, temperature 0.01,
64 segments per page, mask ratio 0.15.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from vgt.model import STREAM_MODES, ModelConfig
from vgt.params import AdamWConfig
from vgt.pretrain import PretrainConfig


@dataclass
class RunConfig:
    # model
    image_size: int = 64
    patch: int = 16                 # P
    layers: int = 2
    heads: int = 4
    hidden: int = 32
    mlp: int = 64
    grid_channels: int = 64         # C_G
    vocab_size: int = 64
    streams: str = "both"
    num_classes: int = 4
    # objectives
    tau: float = 0.01               # SLM temperature
    n_segments: int = 64            # N_S, per-page segment cap
    mask_ratio: float = 0.15
    target_dim: int = 32
    mglm_weight: float = 1.0
    slm_weight: float = 1.0
    # optimizer
    lr: float = 1e-3
    weight_decay: float = 0.01
    warmup_steps: int = 10
    steps: int = 200
    batch_size: int = 4
    # data / run plumbing
    pages: int = 20
    seed: int = 0
    data_dir: str = ""
    init_ckpt: str = ""
    out_dir: str = "out"
    # inference
    score_thresh: float = 0.05
    nms_thresh: float = 0.5
    log_every: int = 20

    def model_config(self) -> ModelConfig:
        return ModelConfig(image_size=self.image_size, patch=self.patch,
                           layers=self.layers, heads=self.heads, hidden=self.hidden,
                           mlp=self.mlp, grid_channels=self.grid_channels,
                           vocab_size=self.vocab_size, streams=self.streams,
                           num_classes=self.num_classes)

    def adamw_config(self) -> AdamWConfig:
        return AdamWConfig(lr=self.lr, weight_decay=self.weight_decay,
                           warmup_steps=self.warmup_steps)

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(mask_ratio=self.mask_ratio, tau=self.tau,
                              n_segments=self.n_segments, target_dim=self.target_dim,
                              mglm_weight=self.mglm_weight, slm_weight=self.slm_weight)


def _convert(key: str, raw: str, target_type: type, lineno: int):
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError:
        raise ValueError(f"line {lineno}: value {raw!r} for key {key!r} is not "
                         f"{target_type.__name__}") from None


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.image_size % cfg.patch:
        raise ValueError(f"image_size {cfg.image_size} not divisible by patch {cfg.patch}")
    if cfg.patch % 4:
        raise ValueError(f"patch {cfg.patch} must be a multiple of 4")
    if cfg.hidden % cfg.heads:
        raise ValueError(f"hidden {cfg.hidden} not divisible by heads {cfg.heads}")
    if cfg.streams not in STREAM_MODES:
        raise ValueError(f"streams must be one of {STREAM_MODES}, got {cfg.streams!r}")
    if not 0.0 < cfg.mask_ratio < 1.0:
        raise ValueError(f"mask_ratio must be in (0,1), got {cfg.mask_ratio}")
    if cfg.tau <= 0:
        raise ValueError(f"tau must be > 0, got {cfg.tau}")
    if cfg.vocab_size <= 4:
        raise ValueError(f"vocab_size must exceed the 4 reserved ids, got {cfg.vocab_size}")
    for attr in ("steps", "batch_size", "n_segments", "pages"):
        if getattr(cfg, attr) < 1:
            raise ValueError(f"{attr} must be >= 1, got {getattr(cfg, attr)}")
    if cfg.data_dir and not os.path.exists(cfg.data_dir):
        raise ValueError(f"data_dir does not exist: {cfg.data_dir}")
    if cfg.init_ckpt and not os.path.exists(cfg.init_ckpt):
        raise ValueError(f"init_ckpt does not exist: {cfg.init_ckpt}")
    return cfg


def parse_config(path: str) -> RunConfig:
    """Read a key-value file into a validated RunConfig with defaults filled."""
    types = {f.name: f.type if isinstance(f.type, type) else type(f.default)
             for f in fields(RunConfig)}
    cfg = RunConfig()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"line {lineno}: expected 'key = value', got {stripped!r}")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            setattr(cfg, key, _convert(key, raw, types[key], lineno))
    return validate(cfg)
