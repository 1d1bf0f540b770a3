"""Patch encoders, multi-scale adaptation, element-wise fusion, and FPN.

Both streams share the same machinery: patchify an H x W x C map into
N = HW/P^2 flattened patches, linearly project to width D, prepend a
learnable leading token, add learnable 1D position embeddings, and run L
pre-norm transformer blocks (MHSA + GELU MLP, residuals, no dropout).
Per-block token sequences are returned so resolution adapters can tap
intermediate depths; four taps produce maps at strides 4/8/16/32 which are
fused across streams by element-wise sum and refined by a standard
top-down FPN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from vgt import tensor as T
from vgt.params import ParamStore
from vgt.tensor import Tensor

LEVELS = (2, 3, 4, 5)


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    heads: int = 4
    hidden: int = 32
    mlp: int = 64
    patch: int = 16
    in_channels: int = 3
    height: int = 64
    width: int = 64

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.height % self.patch or self.width % self.patch:
            raise ValueError(f"{self.height}x{self.width} not divisible by patch {self.patch}")

    @property
    def n_patches(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def grid_hw(self) -> tuple[int, int]:
        return self.height // self.patch, self.width // self.patch

    def default_taps(self) -> tuple[int, int, int, int]:
        L = self.layers
        return (math.ceil(L / 4), math.ceil(L / 2), math.ceil(3 * L / 4), L)


def patchify(x: Tensor, patch: int) -> Tensor:
    """(H, W, C) -> (N, P*P*C); patches and within-patch pixels row-major."""
    H, W, C = x.shape
    if H % patch or W % patch:
        raise ValueError(f"patchify: {H}x{W} not divisible by {patch}")
    hp, wp = H // patch, W // patch
    x = T.reshape(x, (hp, patch, wp, patch, C))
    x = T.transpose(x, (0, 2, 1, 3, 4))
    return T.reshape(x, (hp * wp, patch * patch * C))


def unpatchify(p: Tensor, patch: int, H: int, W: int, C: int) -> Tensor:
    hp, wp = H // patch, W // patch
    x = T.reshape(p, (hp, wp, patch, patch, C))
    x = T.transpose(x, (0, 2, 1, 3, 4))
    return T.reshape(x, (H, W, C))


def init_encoder_params(store: ParamStore, prefix: str, cfg: EncoderConfig,
                        rng: np.random.Generator, sigma: float = 0.02) -> None:
    D, M = cfg.hidden, cfg.mlp
    pdim = cfg.patch * cfg.patch * cfg.in_channels

    def w(name, shape, scale=sigma):
        store.add(f"{prefix}.{name}", Tensor(rng.standard_normal(shape) * scale))

    def zeros(name, shape):
        store.add(f"{prefix}.{name}", Tensor(np.zeros(shape)))

    w("proj.w", (pdim, D))
    zeros("proj.b", (D,))
    w("pos", (cfg.n_patches + 1, D))
    w("cls", (1, D))
    for i in range(cfg.layers):
        for mat in ("wq", "wk", "wv", "wo"):
            w(f"block{i}.attn.{mat}", (D, D))
        for vec in ("bq", "bk", "bv", "bo"):
            zeros(f"block{i}.attn.{vec}", (D,))
        store.add(f"{prefix}.block{i}.ln1.g", Tensor(np.ones(D)))
        zeros(f"block{i}.ln1.b", (D,))
        store.add(f"{prefix}.block{i}.ln2.g", Tensor(np.ones(D)))
        zeros(f"block{i}.ln2.b", (D,))
        w(f"block{i}.mlp.w1", (D, M))
        zeros(f"block{i}.mlp.b1", (M,))
        w(f"block{i}.mlp.w2", (M, D))
        zeros(f"block{i}.mlp.b2", (D,))


def init_adapt_params(store: ParamStore, prefix: str, hidden: int,
                      rng: np.random.Generator, sigma: float = 0.02) -> None:
    for name in ("s4.up1", "s4.up2", "s8.up1"):
        store.add(f"{prefix}.adapt.{name}.w",
                  Tensor(rng.standard_normal((2, 2, hidden, hidden)) * sigma))
        store.add(f"{prefix}.adapt.{name}.b", Tensor(np.zeros(hidden)))


def init_fpn_params(store: ParamStore, prefix: str, hidden: int,
                    rng: np.random.Generator, sigma: float = 0.02) -> None:
    for i in LEVELS:
        store.add(f"{prefix}.lat{i}.w", Tensor(rng.standard_normal((1, 1, hidden, hidden)) * sigma))
        store.add(f"{prefix}.lat{i}.b", Tensor(np.zeros(hidden)))
        store.add(f"{prefix}.smooth{i}.w",
                  Tensor(rng.standard_normal((3, 3, hidden, hidden)) * sigma))
        store.add(f"{prefix}.smooth{i}.b", Tensor(np.zeros(hidden)))


def _attention(x: Tensor, store: ParamStore, p: str, cfg: EncoderConfig) -> Tensor:
    Tn = x.shape[0]
    D, h = cfg.hidden, cfg.heads
    dh = D // h
    q = T.matmul(x, store[f"{p}.wq"]) + store[f"{p}.bq"]
    k = T.matmul(x, store[f"{p}.wk"]) + store[f"{p}.bk"]
    v = T.matmul(x, store[f"{p}.wv"]) + store[f"{p}.bv"]
    q = T.transpose(T.reshape(q, (Tn, h, dh)), (1, 0, 2))
    k = T.transpose(T.reshape(k, (Tn, h, dh)), (1, 0, 2))
    v = T.transpose(T.reshape(v, (Tn, h, dh)), (1, 0, 2))
    scores = T.matmul(q, T.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(dh))
    att = T.softmax(scores, axis=-1)
    ctx = T.matmul(att, v)
    ctx = T.reshape(T.transpose(ctx, (1, 0, 2)), (Tn, D))
    return T.matmul(ctx, store[f"{p}.wo"]) + store[f"{p}.bo"]


def encode_stream(patches: Tensor, cfg: EncoderConfig, store: ParamStore,
                  prefix: str) -> list[Tensor]:
    """Project patches, prepend the leading token, add position embeddings,
    and run the blocks; returns the token sequence after every block."""
    if patches.shape[1] != cfg.patch * cfg.patch * cfg.in_channels:
        raise ValueError(f"patch dim {patches.shape[1]} != "
                         f"{cfg.patch * cfg.patch * cfg.in_channels} for {prefix}")
    x = T.matmul(patches, store[f"{prefix}.proj.w"]) + store[f"{prefix}.proj.b"]
    x = T.concat([store[f"{prefix}.cls"], x], axis=0)
    x = x + store[f"{prefix}.pos"]
    outputs = []
    for i in range(cfg.layers):
        p = f"{prefix}.block{i}"
        x = x + _attention(T.layer_norm(x, store[f"{p}.ln1.g"], store[f"{p}.ln1.b"]),
                           store, f"{p}.attn", cfg)
        h = T.layer_norm(x, store[f"{p}.ln2.g"], store[f"{p}.ln2.b"])
        h = T.matmul(h, store[f"{p}.mlp.w1"]) + store[f"{p}.mlp.b1"]
        h = T.gelu(h)
        h = T.matmul(h, store[f"{p}.mlp.w2"]) + store[f"{p}.mlp.b2"]
        x = x + h
        outputs.append(x)
    return outputs


def multiscale_adapt(block_outputs: list[Tensor], cfg: EncoderConfig,
                     store: ParamStore, prefix: str,
                     taps: tuple[int, int, int, int] | None = None) -> dict[int, Tensor]:
    """Turn four tapped block outputs into maps at strides 4/8/16/32.

    Taps are 1-based block indices; default spreads them evenly over depth.
    The leading token is stripped before reshaping to the patch grid.
    """
    if taps is None:
        taps = cfg.default_taps()
    hp, wp = cfg.grid_hw
    maps = []
    for t in taps:
        tokens = block_outputs[t - 1]
        if tokens.shape[0] != hp * wp + 1:
            raise ValueError(f"token count {tokens.shape[0]} is not a "
                             f"{hp}x{wp} grid plus leading token")
        maps.append(T.reshape(tokens[1:], (hp, wp, cfg.hidden)))

    s4 = T.conv_transpose2d(maps[0], store[f"{prefix}.adapt.s4.up1.w"],
                            store[f"{prefix}.adapt.s4.up1.b"], stride=2)
    s4 = T.gelu(s4)
    s4 = T.conv_transpose2d(s4, store[f"{prefix}.adapt.s4.up2.w"],
                            store[f"{prefix}.adapt.s4.up2.b"], stride=2)
    s8 = T.conv_transpose2d(maps[1], store[f"{prefix}.adapt.s8.up1.w"],
                            store[f"{prefix}.adapt.s8.up1.b"], stride=2)
    s16 = maps[2]
    s32 = T.max_pool2d(maps[3], 2)
    return {2: s4, 3: s8, 4: s16, 5: s32}


def fuse(v: dict[int, Tensor], s: dict[int, Tensor]) -> dict[int, Tensor]:
    """Element-wise sum per pyramid level."""
    out = {}
    for i in LEVELS:
        if v[i].shape != s[i].shape:
            raise ValueError(f"fuse level {i}: {v[i].shape} != {s[i].shape}")
        out[i] = v[i] + s[i]
    return out


def fpn(z: dict[int, Tensor], store: ParamStore, prefix: str = "fpn") -> dict[int, Tensor]:
    """Lateral 1x1 projections, top-down nearest 2x pathway, 3x3 smoothing."""
    lat = {i: T.conv2d(z[i], store[f"{prefix}.lat{i}.w"], store[f"{prefix}.lat{i}.b"])
           for i in LEVELS}
    p = {5: lat[5]}
    for i in (4, 3, 2):
        p[i] = lat[i] + T.upsample_nearest2x(p[i + 1])
    return {i: T.conv2d(p[i], store[f"{prefix}.smooth{i}.w"],
                        store[f"{prefix}.smooth{i}.b"], stride=1, padding=1)
            for i in LEVELS}
