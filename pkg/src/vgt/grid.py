"""2D token-id grid construction, embedding, and masked-token planning.

A grid cell (i, j) holds the id of the sub-token whose box contains it
(half-open membership: x0 <= j < x1, y0 <= i < y1); cells outside every box
hold [PAD]. Overlaps resolve last-token-wins in document order. Embedding
turns the id grid into an H x W x C map by vocabulary-table lookup.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vgt import tensor as T
from vgt.doc import DocPage, MASK_ID, PAD_ID, SubToken
from vgt.tensor import Tensor

ACTION_MASK = "mask"
ACTION_RANDOM = "random"
ACTION_KEEP = "keep"


@dataclass(frozen=True)
class MaskPlan:
    # (sub-token index, action, original token id) per selected position
    entries: tuple[tuple[int, str, int], ...]

    def __len__(self):
        return len(self.entries)


def build_token_id_grid(page: DocPage, H: int, W: int) -> np.ndarray:
    """Token ids per cell; page boxes must already be at H x W resolution."""
    grid = np.full((H, W), PAD_ID, dtype=np.int32)
    for tok in page.tokens:
        x0, y0, x1, y1 = tok.box
        grid[max(0, y0):min(H, y1), max(0, x0):min(W, x1)] = tok.token_id
    return grid


def embed_grid(ids: np.ndarray, table: Tensor) -> Tensor:
    """H x W x C_G lookup of the embedding table; differentiable w.r.t. the table."""
    return T.embedding(table, ids)


def apply_mglm_mask(page: DocPage, ratio: float, seed: int,
                    vocab_size: int) -> tuple[tuple[SubToken, ...], MaskPlan]:
    """BERT-style selection: each sub-token independently selected with
    probability `ratio`; of selected, 80% -> [MASK], 10% -> random id,
    10% -> kept. Returns rewritten sub-tokens plus the plan with originals."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"mask ratio must be in (0,1), got {ratio}")
    if not page.tokens:
        return (), MaskPlan(entries=())
    rng = np.random.default_rng(seed)
    n = len(page.tokens)
    selected = rng.random(n) < ratio
    action_draw = rng.random(n)
    random_ids = rng.integers(4, vocab_size, size=n)
    new_tokens = list(page.tokens)
    entries = []
    for i in np.flatnonzero(selected):
        tok = page.tokens[i]
        if action_draw[i] < 0.8:
            action = ACTION_MASK
            new_id = MASK_ID
        elif action_draw[i] < 0.9:
            action = ACTION_RANDOM
            new_id = int(random_ids[i])
        else:
            action = ACTION_KEEP
            new_id = tok.token_id
        new_tokens[i] = SubToken(token_id=new_id, box=tok.box, word_index=tok.word_index)
        entries.append((int(i), action, tok.token_id))
    return tuple(new_tokens), MaskPlan(entries=tuple(entries))


def dump_grid_csv(ids: np.ndarray, path: str) -> None:
    np.savetxt(path, ids, fmt="%d", delimiter=",")


def id_to_color(ids: np.ndarray) -> np.ndarray:
    """Deterministic id -> RGB hash for inspection images; [PAD] is white."""
    h = (ids.astype(np.uint64) * np.uint64(2654435761)) & np.uint64(0xFFFFFF)
    rgb = np.stack([(h >> np.uint64(16)) & np.uint64(255),
                    (h >> np.uint64(8)) & np.uint64(255),
                    h & np.uint64(255)], axis=-1).astype(np.uint8)
    rgb[ids == PAD_ID] = 255
    return rgb


def dump_grid_png(ids: np.ndarray, path: str) -> None:
    from PIL import Image
    Image.fromarray(id_to_color(ids)).save(path)
