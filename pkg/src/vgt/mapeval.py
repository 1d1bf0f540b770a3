"""COCO-style mean average precision over IoU thresholds 0.50:0.05:0.95.

Per class and threshold, detections are matched greedily in descending
score order to the best-IoU unmatched ground-truth box; precision-recall
is summarized with 101-point interpolated AP. Classes with no ground
truth anywhere are excluded from the mean.
"""

from __future__ import annotations

import numpy as np

from vgt.detect import Detection, iou

IOU_THRESHOLDS = tuple(np.round(np.arange(0.50, 0.96, 0.05), 2))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


def average_precision(matches: list[tuple[float, bool]], n_gt: int) -> float:
    """101-point interpolated AP from (score, is_true_positive) pairs."""
    if n_gt == 0:
        return float("nan")
    if not matches:
        return 0.0
    order = sorted(range(len(matches)), key=lambda i: (-matches[i][0], i))
    tp = np.cumsum([1.0 if matches[i][1] else 0.0 for i in order])
    fp = np.cumsum([0.0 if matches[i][1] else 1.0 for i in order])
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1e-12)
    # interpolated precision: max precision at any recall >= r
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    for r in RECALL_POINTS:
        idx = np.searchsorted(recall, r, side="left")
        ap += interp[idx] if idx < len(interp) else 0.0
    return ap / len(RECALL_POINTS)


def match_detections(dets: list[Detection], gt_boxes: list[tuple],
                     thresh: float) -> list[tuple[float, bool]]:
    """Greedy score-order matching of one class on one image."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    used = [False] * len(gt_boxes)
    out = []
    for i in order:
        d = dets[i]
        best, best_iou = -1, thresh
        for j, g in enumerate(gt_boxes):
            if used[j]:
                continue
            v = iou(d.box, g)
            if v >= best_iou:
                best, best_iou = j, v
        if best >= 0:
            used[best] = True
            out.append((d.score, True))
        else:
            out.append((d.score, False))
    return out


def evaluate_map(predictions: dict[int, list[Detection]],
                 ground_truth: dict[int, list[tuple[int, tuple]]],
                 num_classes: int) -> dict:
    """Mean AP across classes and IoU thresholds.

    `predictions` and `ground_truth` are keyed by image id; ground truth
    entries are (class_id, box). Returns per-class AP (averaged over
    thresholds), AP at 0.50 and 0.75, and the overall mean."""
    image_ids = sorted(ground_truth)
    per_class: dict[int, dict[float, float]] = {}
    for cls in range(num_classes):
        n_gt = sum(sum(1 for c, _ in ground_truth[img] if c == cls)
                   for img in image_ids)
        if n_gt == 0:
            continue
        per_class[cls] = {}
        for t in IOU_THRESHOLDS:
            matches = []
            for img in image_ids:
                dets = [d for d in predictions.get(img, []) if d.class_id == cls]
                boxes = [b for c, b in ground_truth[img] if c == cls]
                matches.extend(match_detections(dets, boxes, t))
            per_class[cls][t] = average_precision(matches, n_gt)
    class_ap = {cls: float(np.mean(list(v.values()))) for cls, v in per_class.items()}
    mean = float(np.mean(list(class_ap.values()))) if class_ap else float("nan")

    def at(t):
        vals = [per_class[c][t] for c in per_class]
        return float(np.mean(vals)) if vals else float("nan")

    return {"map": mean, "ap50": at(0.50), "ap75": at(0.75), "per_class": class_ap}
