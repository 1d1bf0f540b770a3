"""Model assembly: configuration, parameter construction, pyramid forward."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from vgt import backbone as B
from vgt import grid as G
from vgt.doc import DocPage
from vgt.params import ParamStore
from vgt.precision import dtype
from vgt.tensor import Tensor

STREAM_MODES = ("both", "vision", "grid")


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    patch: int = 16
    layers: int = 2
    heads: int = 4
    hidden: int = 32
    mlp: int = 64
    grid_channels: int = 64     # C_G
    vocab_size: int = 64
    streams: str = "both"
    num_classes: int = 4
    init_sigma: float = 0.02

    def __post_init__(self):
        if self.streams not in STREAM_MODES:
            raise ValueError(f"streams must be one of {STREAM_MODES}")
        if self.image_size % self.patch:
            raise ValueError(f"image size {self.image_size} not divisible by "
                             f"patch {self.patch}")

    def vision_encoder(self) -> B.EncoderConfig:
        return B.EncoderConfig(layers=self.layers, heads=self.heads, hidden=self.hidden,
                               mlp=self.mlp, patch=self.patch, in_channels=3,
                               height=self.image_size, width=self.image_size)

    def grid_encoder(self) -> B.EncoderConfig:
        return B.EncoderConfig(layers=self.layers, heads=self.heads, hidden=self.hidden,
                               mlp=self.mlp, patch=self.patch,
                               in_channels=self.grid_channels,
                               height=self.image_size, width=self.image_size)


class VGTModel:
    """Holds the parameter store and runs inputs to the refined pyramid."""

    def __init__(self, cfg: ModelConfig, store: ParamStore | None = None,
                 seed: int = 0):
        self.cfg = cfg
        self.store = store if store is not None else ParamStore()
        if store is None:
            self._init_params(np.random.default_rng(seed))

    def _init_params(self, rng: np.random.Generator) -> None:
        cfg, store, sigma = self.cfg, self.store, self.cfg.init_sigma
        if cfg.streams in ("both", "vision"):
            B.init_encoder_params(store, "vit", cfg.vision_encoder(), rng, sigma)
            B.init_adapt_params(store, "vit", cfg.hidden, rng, sigma)
        if cfg.streams in ("both", "grid"):
            store.add("grid.embed",
                      Tensor(rng.standard_normal((cfg.vocab_size, cfg.grid_channels)) * sigma))
            B.init_encoder_params(store, "git", cfg.grid_encoder(), rng, sigma)
            B.init_adapt_params(store, "git", cfg.hidden, rng, sigma)
        B.init_fpn_params(store, "fpn", cfg.hidden, rng, sigma)

    # -- inputs -----------------------------------------------------------------

    def normalize_image(self, image: np.ndarray) -> Tensor:
        """uint8 H x W x 3 -> zero-centered float tensor."""
        return Tensor(image.astype(dtype()) / 127.5 - 1.0)

    def grid_ids_for(self, page: DocPage) -> np.ndarray:
        if (page.page_h, page.page_w) != (self.cfg.image_size, self.cfg.image_size):
            raise ValueError(f"page is {page.page_h}x{page.page_w}, model expects "
                             f"{self.cfg.image_size}")
        return G.build_token_id_grid(page, self.cfg.image_size, self.cfg.image_size)

    # -- forward ----------------------------------------------------------------

    def stream_pyramid(self, x: Tensor, prefix: str,
                       enc_cfg: B.EncoderConfig) -> dict[int, Tensor]:
        patches = B.patchify(x, self.cfg.patch)
        blocks = B.encode_stream(patches, enc_cfg, self.store, prefix)
        return B.multiscale_adapt(blocks, enc_cfg, self.store, prefix)

    def fused_pyramid(self, image: np.ndarray | None,
                      grid_ids: np.ndarray | None) -> dict[int, Tensor]:
        """Per-stream pyramids, element-wise fusion, FPN refinement."""
        cfg = self.cfg
        v = s = None
        if cfg.streams in ("both", "vision"):
            if image is None:
                raise ValueError("vision stream enabled but no image given")
            v = self.stream_pyramid(self.normalize_image(image), "vit", cfg.vision_encoder())
        if cfg.streams in ("both", "grid"):
            if grid_ids is None:
                raise ValueError("grid stream enabled but no grid given")
            emb = G.embed_grid(grid_ids, self.store["grid.embed"])
            s = self.stream_pyramid(emb, "git", cfg.grid_encoder())
        if v is not None and s is not None:
            z = B.fuse(v, s)
        else:
            z = v if v is not None else s
        return B.fpn(z, self.store)

    def forward_page(self, page: DocPage) -> dict[int, Tensor]:
        image = page.image if self.cfg.streams in ("both", "vision") else None
        gids = self.grid_ids_for(page) if self.cfg.streams in ("both", "grid") else None
        return self.fused_pyramid(image, gids)


def vision_only(cfg: ModelConfig) -> ModelConfig:
    return replace(cfg, streams="vision")


def grid_only(cfg: ModelConfig) -> ModelConfig:
    return replace(cfg, streams="grid")
