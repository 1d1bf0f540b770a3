"""Document data model: words, sub-word tokens, pages, vocab, and file I/O.

Boxes are (x0, y0, x1, y1) integer pixel coordinates with x0 < x1, y0 < y1.
All types are immutable after construction and safe to share across threads.

OCR-JSON schema:
    {"page": {"h": int, "w": int},
     "words": [{"text": str, "box": [x0, y0, x1, y1]}, ...],
     "segments": [{"text": str, "box": [...]}, ...]}   # optional

When "segments" is absent, text lines are grouped from words: vertical
overlap >= 0.5 of the smaller height and horizontal gap <= the page's
median character width.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from importlib import resources
from statistics import median
from typing import Optional, Sequence

import numpy as np

Box = tuple[int, int, int, int]

PAD, MASK, UNK, CLS = "[PAD]", "[MASK]", "[UNK]", "[CLS]"
RESERVED = (PAD, MASK, UNK, CLS)
PAD_ID, MASK_ID, UNK_ID, CLS_ID = 0, 1, 2, 3

# 27-category taxonomy for real-world layout regions, shipped as a constant.
D4LA_CATEGORIES = (
    "DocTitle", "ListText", "LetterHead", "Question", "RegionList", "TableName",
    "FigureName", "Footer", "Number", "ParaTitle", "RegionTitle", "LetterDear",
    "OtherText", "Abstract", "Table", "Equation", "PageHeader", "Catalog",
    "ParaText", "Date", "LetterSign", "RegionKV", "Author", "Figure",
    "Reference", "PageFooter", "PageNumber",
)


class Vocab:
    """Ordered token list with fixed reserved ids [PAD]=0 [MASK]=1 [UNK]=2 [CLS]=3."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            raise ValueError(f"vocab must start with {RESERVED}, got {tokens[:4]}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocab contains duplicate tokens")
        self.tokens = tokens
        self._ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        return self._ids[token]

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    @classmethod
    def from_file(cls, path: str) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f if line.rstrip("\n")])

    @classmethod
    def toy(cls) -> "Vocab":
        """The 1,000-token vocabulary shipped with the package."""
        text = resources.files("vgt").joinpath("data/toy_vocab.txt").read_text("utf-8")
        return cls([line for line in text.splitlines() if line])

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(self.tokens) + "\n")


def tokenize(word: str, vocab: Vocab) -> list[int]:
    """Greedy longest-match sub-word segmentation; falls back to a single [UNK]."""
    text = word.lower()
    if not text:
        return [UNK_ID]
    ids = []
    start = 0
    while start < len(text):
        end = len(text)
        match = None
        while end > start:
            piece = text[start:end]
            if start > 0:
                piece = "##" + piece
            if piece in vocab:
                match = vocab.id(piece)
                break
            end -= 1
        if match is None:
            return [UNK_ID]
        ids.append(match)
        start = end
    return ids


def detokenize(ids: Sequence[int], vocab: Vocab) -> str:
    return "".join(vocab.token(i).removeprefix("##") for i in ids)


def split_word_box(box: Box, n: int) -> list[Box]:
    """Split a word box into n equal-width sub-boxes; the last absorbs the remainder."""
    if n < 1:
        raise ValueError(f"sub-token count must be >= 1, got {n}")
    x0, y0, x1, y1 = box
    width = x1 - x0
    if n == 1:
        return [box]
    base = width // n
    if base == 0:
        warnings.warn(f"word box width {width} < {n} sub-tokens; emitting 1-px boxes")
        return [(min(x0 + i, x1 - 1), y0, min(x0 + i + 1, x1), y1) for i in range(n)]
    out = []
    for i in range(n):
        left = x0 + base * i
        right = x1 if i == n - 1 else x0 + base * (i + 1)
        out.append((left, y0, right, y1))
    return out


@dataclass(frozen=True)
class Word:
    text: str
    box: Box


@dataclass(frozen=True)
class SubToken:
    token_id: int
    box: Box
    word_index: int


@dataclass(frozen=True)
class DocPage:
    page_h: int
    page_w: int
    words: tuple[Word, ...]
    tokens: tuple[SubToken, ...]
    image: np.ndarray  # (page_h, page_w, 3) uint8
    segments: tuple[tuple[str, Box], ...] = ()


def clamp_box(box: Sequence[int], w: int, h: int) -> Box:
    x0, y0, x1, y1 = box
    x0 = max(0, min(int(x0), w - 1))
    y0 = max(0, min(int(y0), h - 1))
    x1 = max(x0 + 1, min(int(x1), w))
    y1 = max(y0 + 1, min(int(y1), h))
    return (x0, y0, x1, y1)


def derive_tokens(words: Sequence[Word], vocab: Vocab) -> tuple[SubToken, ...]:
    out = []
    for wi, word in enumerate(words):
        ids = tokenize(word.text, vocab)
        boxes = split_word_box(word.box, len(ids))
        out.extend(SubToken(tid, b, wi) for tid, b in zip(ids, boxes))
    return tuple(out)


def group_segments(words: Sequence[Word]) -> tuple[tuple[str, Box], ...]:
    """Group words into text lines by vertical overlap and horizontal proximity."""
    if not words:
        return ()
    char_widths = [(w.box[2] - w.box[0]) / max(1, len(w.text)) for w in words]
    max_gap = median(char_widths)
    order = sorted(range(len(words)), key=lambda i: (words[i].box[1], words[i].box[0]))
    lines: list[list[Word]] = []
    for i in order:
        w = words[i]
        placed = False
        for line in lines:
            last = line[-1]
            oy = min(last.box[3], w.box[3]) - max(last.box[1], w.box[1])
            min_h = min(last.box[3] - last.box[1], w.box[3] - w.box[1])
            gap = w.box[0] - last.box[2]
            if oy >= 0.5 * min_h and 0 <= gap <= max_gap:
                line.append(w)
                placed = True
                break
        if not placed:
            lines.append([w])
    segs = []
    for line in lines:
        text = " ".join(w.text for w in line)
        box = (min(w.box[0] for w in line), min(w.box[1] for w in line),
               max(w.box[2] for w in line), max(w.box[3] for w in line))
        segs.append((text, box))
    segs.sort(key=lambda s: (s[1][1], s[1][0]))
    return tuple(segs)


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ValueError(f"OCR-JSON missing field {key!r} in {where}")
    return obj[key]


def load_ocr_page(path: str, vocab: Vocab,
                  image: Optional[np.ndarray] = None) -> DocPage:
    """Read one OCR-JSON page. A PNG with the same stem supplies the raster;
    otherwise (or if ``image`` is given) a blank white page is used."""
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: malformed JSON ({e})") from e
    page = _require(raw, "page", path)
    h = int(_require(page, "h", f"{path}#page"))
    w = int(_require(page, "w", f"{path}#page"))
    words = []
    for i, entry in enumerate(_require(raw, "words", path)):
        text = _require(entry, "text", f"{path}#words[{i}]")
        box = _require(entry, "box", f"{path}#words[{i}]")
        words.append(Word(text=str(text), box=clamp_box(box, w, h)))
    if image is None:
        png = path[:-5] + ".png" if path.endswith(".json") else path + ".png"
        try:
            from PIL import Image
            image = np.asarray(Image.open(png).convert("RGB"))
        except FileNotFoundError:
            image = np.full((h, w, 3), 255, dtype=np.uint8)
    if "segments" in raw:
        segments = tuple((str(s["text"]), clamp_box(s["box"], w, h)) for s in raw["segments"])
    else:
        segments = group_segments(words)
    return DocPage(page_h=h, page_w=w, words=tuple(words),
                   tokens=derive_tokens(words, vocab), image=image, segments=segments)


def save_ocr_page(path: str, page: DocPage) -> None:
    raw = {
        "page": {"h": page.page_h, "w": page.page_w},
        "words": [{"text": w.text, "box": list(w.box)} for w in page.words],
        "segments": [{"text": t, "box": list(b)} for t, b in page.segments],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(raw, f, indent=1, sort_keys=True)
        f.write("\n")


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def rescale_page(page: DocPage, H: int, W: int, vocab: Vocab) -> DocPage:
    """Resize the raster to H x W and rescale all boxes consistently."""
    if (page.page_h, page.page_w) == (H, W):
        return page
    from PIL import Image
    sx, sy = W / page.page_w, H / page.page_h

    def scale(box: Box) -> Box:
        x0, y0, x1, y1 = box
        return clamp_box((round_half_up(x0 * sx), round_half_up(y0 * sy),
                          round_half_up(x1 * sx), round_half_up(y1 * sy)), W, H)

    img = np.asarray(Image.fromarray(page.image).resize((W, H), Image.BILINEAR))
    words = tuple(Word(w.text, scale(w.box)) for w in page.words)
    segments = tuple((t, scale(b)) for t, b in page.segments)
    return DocPage(page_h=H, page_w=W, words=words,
                   tokens=derive_tokens(words, vocab), image=img, segments=segments)
