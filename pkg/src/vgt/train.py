"""Detection fine-tuning loop and evaluation over a synthetic corpus."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from vgt import detect as D
from vgt import mapeval
from vgt.doc import DocPage
from vgt.model import VGTModel
from vgt.params import AdamWConfig, ParamStore
from vgt.tensor import Tensor


@dataclass
class TrainStats:
    step: int
    loss: float


def load_pretrained(model: VGTModel, path: str,
                    prefixes: tuple[str, ...] = ("git.", "grid.embed")) -> dict:
    """Initialize matching parameters from a pre-training checkpoint.

    Only names under `prefixes` are considered; shape mismatches are hard
    errors. Returns {"loaded": [...], "missing": [...], "extra": [...]}."""
    arrays = ParamStore.load_arrays(path)
    wanted = {n for n, _ in model.store.items()
              if any(n.startswith(p) for p in prefixes)}
    loaded, extra = [], []
    for name in sorted(arrays):
        if not any(name.startswith(p) for p in prefixes):
            continue
        if name not in wanted:
            extra.append(name)
            continue
        p = model.store[name]
        if p.data.shape != arrays[name].shape:
            raise ValueError(f"shape mismatch for {name}: checkpoint "
                             f"{arrays[name].shape} vs model {p.data.shape}")
        p.data = arrays[name].astype(p.data.dtype)
        loaded.append(name)
    missing = sorted(wanted - set(loaded))
    return {"loaded": loaded, "missing": missing, "extra": extra}


def page_loss(model: VGTModel, page: DocPage,
              gt: list[tuple[int, tuple]]) -> Tensor:
    pyramid = model.forward_page(page)
    preds = D.detect_forward(pyramid, model.store)
    targets = D.assign_targets(gt, model.cfg.image_size, model.cfg.patch)
    return D.detection_loss(preds, targets)


def train_detector(model: VGTModel, pages: list[DocPage],
                   annotations: list[list[tuple[int, tuple]]],
                   opt: AdamWConfig, steps: int, batch_size: int, seed: int,
                   log_path: str | None = None,
                   log_every: int = 20) -> list[TrainStats]:
    """Deterministic fine-tuning on (page, ground truth) pairs."""
    if len(pages) != len(annotations):
        raise ValueError("pages and annotations differ in length")
    rng = np.random.default_rng(seed)
    history, rows = [], []
    for step in range(1, steps + 1):
        idx = rng.choice(len(pages), size=min(batch_size, len(pages)), replace=False)
        terms = [page_loss(model, pages[i], annotations[i]) for i in idx]
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        total = total * (1.0 / len(terms))
        model.store.zero_grads()
        total.backward()
        for _, p in model.store.items():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        model.store.adamw_step(opt)
        history.append(TrainStats(step=step, loss=total.item()))
        if log_path and (step % log_every == 0 or step == steps or step == 1):
            rows.append((step, f"{total.item():.6f}"))
    if log_path:
        with open(log_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(("step", "loss"))
            writer.writerows(rows)
    return history


def predict_page(model: VGTModel, page: DocPage, score_thresh: float = 0.05,
                 nms_thresh: float = 0.5) -> list[D.Detection]:
    pyramid = model.forward_page(page)
    preds = D.detect_forward(pyramid, model.store)
    dets = D.decode_predictions(preds, model.cfg.image_size, score_thresh,
                                patch=model.cfg.patch)
    return D.nms(dets, nms_thresh)


def evaluate_detector(model: VGTModel, pages: list[DocPage],
                      annotations: list[list[tuple[int, tuple]]],
                      score_thresh: float = 0.05,
                      nms_thresh: float = 0.5) -> dict:
    preds = {i: predict_page(model, p, score_thresh, nms_thresh)
             for i, p in enumerate(pages)}
    gt = {i: annotations[i] for i in range(len(pages))}
    return mapeval.evaluate_map(preds, gt, model.cfg.num_classes)
