"""Anchor-free detection over the refined pyramid.

A shared two-conv tower feeds 1x1 class and box branches at every level.
Each feature location predicts per-class logits and positive (l, t, r, b)
distances (via exp, in stride units) to its box edges. Ground truth is
assigned to a level by sqrt-area thresholds and to the locations whose
centers fall inside the box; training uses sigmoid focal loss plus -log IoU
on positives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vgt import tensor as T
from vgt.backbone import LEVELS
from vgt.params import ParamStore
from vgt.tensor import Tensor

# sqrt-area level boundaries defined at a 128-px canonical image
LEVEL_BOUNDS = (32.0, 64.0, 128.0)
CANONICAL_IMAGE = 128.0


@dataclass(frozen=True)
class Detection:
    class_id: int
    score: float
    box: tuple[float, float, float, float]


@dataclass
class HeadTargets:
    # per level: labels (h, w) with -1 = background, else class id;
    # dists (h, w, 4) normalized (l, t, r, b) in stride units
    labels: dict[int, np.ndarray]
    dists: dict[int, np.ndarray]

    def num_positive(self) -> int:
        return int(sum((lab >= 0).sum() for lab in self.labels.values()))


def init_head_params(store: ParamStore, hidden: int, num_classes: int,
                     rng: np.random.Generator, sigma: float = 0.02) -> None:
    for i in range(2):
        store.add(f"head.tower{i}.w", Tensor(rng.standard_normal((3, 3, hidden, hidden)) * sigma))
        store.add(f"head.tower{i}.b", Tensor(np.zeros(hidden)))
    store.add("head.cls.w", Tensor(rng.standard_normal((1, 1, hidden, num_classes)) * sigma))
    # background-heavy prior: start class probabilities low
    store.add("head.cls.b", Tensor(np.full(num_classes, -2.0)))
    store.add("head.reg.w", Tensor(rng.standard_normal((1, 1, hidden, 4)) * sigma))
    store.add("head.reg.b", Tensor(np.zeros(4)))


def _clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    return x - T.relu(x - hi) + T.relu(lo - x)


def detect_forward(pyramid: dict[int, Tensor],
                   store: ParamStore) -> dict[int, tuple[Tensor, Tensor]]:
    """Per level: (class logits (h, w, K), positive distances (h, w, 4)).

    The raw regression output is clamped before exponentiation so a bad
    optimization step cannot overflow the distance decoding."""
    out = {}
    for i in LEVELS:
        x = pyramid[i]
        for t in range(2):
            x = T.gelu(T.conv2d(x, store[f"head.tower{t}.w"],
                                store[f"head.tower{t}.b"], stride=1, padding=1))
        logits = T.conv2d(x, store["head.cls.w"], store["head.cls.b"])
        raw = _clamp(T.conv2d(x, store["head.reg.w"], store["head.reg.b"]), -8.0, 8.0)
        out[i] = (logits, T.exp(raw))
    return out


def level_for_box(box, image_size: int) -> int:
    x0, y0, x1, y1 = box
    sa = np.sqrt(max(0.0, x1 - x0) * max(0.0, y1 - y0))
    scale = image_size / CANONICAL_IMAGE
    for level, bound in zip((2, 3, 4), LEVEL_BOUNDS):
        if sa < bound * scale:
            return level
    return 5


def stride_of(level: int, patch: int = 16) -> int:
    """Feature stride of a pyramid level; the stride-`patch` encoder output
    sits at level 4."""
    s = patch * 2 ** (level - 4)
    if s != int(s) or s < 1:
        raise ValueError(f"patch {patch} gives no integer stride at level {level}")
    return int(s)


def location_centers(level: int, image_size: int,
                     patch: int = 16) -> tuple[np.ndarray, np.ndarray]:
    stride = stride_of(level, patch)
    n = image_size // stride
    c = (np.arange(n) + 0.5) * stride
    return np.broadcast_to(c[:, None], (n, n)), np.broadcast_to(c[None, :], (n, n))


def assign_targets(gt: list[tuple[int, tuple]], image_size: int,
                   patch: int = 16) -> HeadTargets:
    """GT -> level by size, then positives at interior locations (ties to the
    smaller box). A GT with no interior location claims its nearest center."""
    labels, dists, owner_area = {}, {}, {}
    for level in LEVELS:
        n = image_size // stride_of(level, patch)
        labels[level] = np.full((n, n), -1, dtype=np.int64)
        dists[level] = np.zeros((n, n, 4))
        owner_area[level] = np.full((n, n), np.inf)

    def write(level, mask_or_idx, cls, box, area):
        stride = stride_of(level, patch)
        cy, cx = location_centers(level, image_size, patch)
        x0, y0, x1, y1 = box
        sel = mask_or_idx
        take = sel & (area < owner_area[level])
        labels[level][take] = cls
        owner_area[level][take] = area
        d = np.stack([(cx - x0), (cy - y0), (x1 - cx), (y1 - cy)], axis=-1) / stride
        dists[level][take] = d[take]

    for cls, box in gt:
        x0, y0, x1, y1 = (max(0.0, box[0]), max(0.0, box[1]),
                          min(float(image_size), box[2]), min(float(image_size), box[3]))
        box = (x0, y0, x1, y1)
        area = (x1 - x0) * (y1 - y0)
        level = level_for_box(box, image_size)
        cy, cx = location_centers(level, image_size, patch)
        inside = (cx > x0) & (cx < x1) & (cy > y0) & (cy < y1)
        if not inside.any():
            # nearest-center fallback so every GT is learnable at desk scale
            bx, by = (x0 + x1) / 2, (y0 + y1) / 2
            d2 = (cx - bx) ** 2 + (cy - by) ** 2
            inside = d2 == d2.min()
        write(level, inside, cls, box, area)
    return HeadTargets(labels=labels, dists=dists)


def _softplus(x: Tensor) -> Tensor:
    ax = T.relu(x) + T.relu(-x)
    return T.log(T.exp(-ax) + 1.0) + T.relu(x)


def detection_loss(preds: dict[int, tuple[Tensor, Tensor]], targets: HeadTargets,
                   gamma: float = 2.0, alpha: float = 0.25) -> Tensor:
    """Sigmoid focal classification loss plus -log IoU on positive boxes,
    both normalized by the positive count."""
    n_pos = max(1, targets.num_positive())
    terms = []
    for i in LEVELS:
        logits, dist = preds[i]
        h, w, K = logits.shape
        lab = targets.labels[i]
        onehot = np.zeros((h, w, K))
        pos = lab >= 0
        onehot[pos, lab[pos]] = 1.0
        y = Tensor(onehot)
        p = T.sigmoid(logits)
        log_p = -_softplus(-logits)
        log_1p = -_softplus(logits)
        focal = (y * ((1.0 - p) ** gamma * log_p) * (-alpha) +
                 (1.0 - y) * (p ** gamma * log_1p) * (alpha - 1.0))
        terms.append(focal.sum())
        if pos.any():
            idx = np.flatnonzero(pos.reshape(-1))
            pd = T.reshape(dist, (h * w, 4))[idx]
            td = targets.dists[i].reshape(h * w, 4)[idx]
            tl, tt, tr, tb = td[:, 0], td[:, 1], td[:, 2], td[:, 3]
            pl, pt, pr, pb = pd[:, 0], pd[:, 1], pd[:, 2], pd[:, 3]

            def minimum(a: Tensor, b_arr: np.ndarray) -> Tensor:
                return a - T.relu(a - Tensor(b_arr))

            iw = minimum(pl, tl) + minimum(pr, tr)
            ih = minimum(pt, tt) + minimum(pb, tb)
            inter = iw * ih
            area_p = (pl + pr) * (pt + pb)
            area_t = Tensor((tl + tr) * (tt + tb))
            iou = inter / (area_p + area_t - inter)
            terms.append(-T.log(iou).sum())
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / n_pos)


def decode_predictions(preds: dict[int, tuple[Tensor, Tensor]], image_size: int,
                       score_thresh: float = 0.05, patch: int = 16) -> list[Detection]:
    """Location + distances -> boxes; per-class sigmoid scores above threshold."""
    if not 0.0 < score_thresh < 1.0:
        raise ValueError(f"score_thresh must be in (0,1), got {score_thresh}")
    out = []
    for i in LEVELS:
        logits, dist = preds[i]
        stride = stride_of(i, patch)
        scores = 1.0 / (1.0 + np.exp(-logits.data))
        d = dist.data * stride
        cy, cx = location_centers(i, image_size, patch)
        boxes = np.stack([cx - d[..., 0], cy - d[..., 1],
                          cx + d[..., 2], cy + d[..., 3]], axis=-1)
        keep = np.argwhere(scores > score_thresh)
        for r, c, k in keep:
            out.append(Detection(class_id=int(k), score=float(scores[r, c, k]),
                                 box=tuple(float(v) for v in boxes[r, c])))
    return out


def iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def nms(dets: list[Detection], iou_thresh: float = 0.5) -> list[Detection]:
    """Greedy per-class suppression, score-descending, ties to lower index."""
    kept = []
    by_class: dict[int, list[tuple[int, Detection]]] = {}
    for idx, d in enumerate(dets):
        by_class.setdefault(d.class_id, []).append((idx, d))
    for cls in sorted(by_class):
        order = sorted(by_class[cls], key=lambda t: (-t[1].score, t[0]))
        chosen: list[Detection] = []
        for _, d in order:
            if all(iou(d.box, c.box) <= iou_thresh for c in chosen):
                chosen.append(d)
        kept.extend(chosen)
    return kept
