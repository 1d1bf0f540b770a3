"""Synthetic document generator for desk-scale experiments.

Pages are white rasters with non-overlapping rectangular regions. Two of the
default classes ("text_a", "text_b") are rendered by the same class-blind
style, so they are indistinguishable from pixels alone, but their word
tokens are drawn from disjoint halves of the vocabulary; telling them apart
requires reading the grid. Word tokens within a region are consecutive ids
from the class pool (wrapping), which gives masked-token prediction a
learnable local structure.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from vgt import coco
from vgt.doc import DocPage, RESERVED, Vocab, Word, derive_tokens


@dataclass(frozen=True)
class SynthClass:
    name: str
    style: str                  # "gray" | "dark" | "ruled"
    pool: tuple[int, int]       # vocab id range [lo, hi) for word tokens; empty = no text


@dataclass
class SynthConfig:
    page_size: int = 64
    regions_min: int = 2
    regions_max: int = 3
    region_min: int = 16
    region_max: int = 28
    word_w: int = 5
    word_h: int = 3
    classes: tuple[SynthClass, ...] = ()
    pack_retries: int = 50

    def __post_init__(self):
        if not self.classes:
            raise ValueError("SynthConfig needs a class set; see default_classes()")


def make_synth_vocab(size: int) -> Vocab:
    """A vocabulary of `size` whole-word tokens 'w0', 'w1', ... after the reserved ids."""
    if size <= len(RESERVED):
        raise ValueError(f"vocab size must exceed {len(RESERVED)}")
    return Vocab(list(RESERVED) + [f"w{i}" for i in range(size - len(RESERVED))])


def default_classes(vocab: Vocab) -> tuple[SynthClass, ...]:
    """Two pixel-identical text classes with disjoint vocab halves, plus two
    visually distinct classes."""
    lo = len(RESERVED)
    half = (len(vocab) - lo) // 2
    return (
        SynthClass("text_a", "gray", (lo, lo + half)),
        SynthClass("text_b", "gray", (lo + half, lo + 2 * half)),
        SynthClass("figure", "dark", (0, 0)),
        SynthClass("table", "ruled", (lo, lo + half)),
    )


def pair_only_classes(vocab: Vocab) -> tuple[SynthClass, ...]:
    return default_classes(vocab)[:2]


def _place_regions(cfg: SynthConfig, rng: np.random.Generator):
    n = int(rng.integers(cfg.regions_min, cfg.regions_max + 1))
    boxes = []
    for _ in range(n):
        for _attempt in range(200):
            w = int(rng.integers(cfg.region_min, cfg.region_max + 1))
            h = int(rng.integers(cfg.region_min, cfg.region_max + 1))
            x0 = int(rng.integers(1, cfg.page_size - w))
            y0 = int(rng.integers(1, cfg.page_size - h))
            cand = (x0, y0, x0 + w, y0 + h)
            if all(cand[2] + 1 <= b[0] or b[2] + 1 <= cand[0] or
                   cand[3] + 1 <= b[1] or b[3] + 1 <= cand[1] for b in boxes):
                boxes.append(cand)
                break
        else:
            return None
    return boxes


def _fill_words(region, cls: SynthClass, cfg: SynthConfig, rng: np.random.Generator):
    """Lay out rows of single-token words inside the region; returns (words, segments)."""
    lo, hi = cls.pool
    if hi <= lo:
        return [], []
    x0, y0, x1, y1 = region
    pool_size = hi - lo
    start = int(rng.integers(0, pool_size))
    words, segments = [], []
    ww, wh = cfg.word_w, cfg.word_h
    k = 0
    y = y0 + 1
    while y + wh <= y1 - 1:
        row = []
        x = x0 + 1
        while x + ww <= x1 - 1:
            tid = lo + (start + k) % pool_size
            row.append(Word(text=f"w{tid - len(RESERVED)}", box=(x, y, x + ww, y + wh)))
            k += 1
            x += ww + 1
        if row:
            words.extend(row)
            seg_box = (row[0].box[0], y, row[-1].box[2], y + wh)
            segments.append((" ".join(w.text for w in row), seg_box))
        y += wh + 1
    return words, segments


def _render(img: np.ndarray, region, style: str) -> None:
    x0, y0, x1, y1 = region
    if style == "gray":
        img[y0:y1, x0:x1] = 200
    elif style == "dark":
        img[y0:y1, x0:x1] = 90
    elif style == "ruled":
        img[y0:y1, x0:x1] = 235
        img[y0:y1:4, x0:x1] = 120
        img[y0:y1, x0] = 120
        img[y0:y1, x1 - 1] = 120
    else:
        raise ValueError(f"unknown render style {style!r}")


def synth_generate(cfg: SynthConfig, vocab: Vocab, seed: int):
    """Generate one page. Returns (DocPage, [(class_id, box), ...])."""
    rng = np.random.default_rng(seed)
    regions = None
    for _ in range(cfg.pack_retries):
        regions = _place_regions(cfg, rng)
        if regions is not None:
            break
    if regions is None:
        raise RuntimeError(f"could not pack regions after {cfg.pack_retries} retries "
                           f"(page {cfg.page_size}, regions up to {cfg.region_max})")
    img = np.full((cfg.page_size, cfg.page_size, 3), 255, dtype=np.uint8)
    words: list[Word] = []
    segments = []
    gt = []
    for region in regions:
        ci = int(rng.integers(0, len(cfg.classes)))
        cls = cfg.classes[ci]
        _render(img, region, cls.style)
        rw, rs = _fill_words(region, cls, cfg, rng)
        words.extend(rw)
        segments.extend(rs)
        gt.append((ci, region))
    page = DocPage(page_h=cfg.page_size, page_w=cfg.page_size,
                   words=tuple(words), tokens=derive_tokens(words, vocab),
                   image=img, segments=tuple(segments))
    return page, gt


def save_corpus(out_dir: str, cfg: SynthConfig, vocab: Vocab,
                n_pages: int, seed: int) -> None:
    """Write PNG + OCR-JSON per page, COCO annotations, and the vocab."""
    from PIL import Image

    from vgt.doc import save_ocr_page

    os.makedirs(out_dir, exist_ok=True)
    images = []
    for i in range(n_pages):
        page, gt = synth_generate(cfg, vocab, seed=seed * 100003 + i)
        stem = f"page_{i:04d}"
        Image.fromarray(page.image).save(os.path.join(out_dir, stem + ".png"))
        save_ocr_page(os.path.join(out_dir, stem + ".json"), page)
        images.append(coco.CocoImage(
            image_id=i, file_name=stem + ".png",
            width=page.page_w, height=page.page_h,
            annotations=[(ci, tuple(float(v) for v in box)) for ci, box in gt]))
    dataset = coco.CocoDataset(images=images,
                               class_names=[c.name for c in cfg.classes],
                               original_ids=list(range(1, len(cfg.classes) + 1)))
    coco.save_coco(os.path.join(out_dir, "annotations.json"), dataset)
    vocab.save(os.path.join(out_dir, "vocab.txt"))
