"""Grid-stream pre-training: masked-token recovery and segment alignment.

Both objectives read the finest refined pyramid level (stride 4) computed
from the masked grid through the grid encoder, adapters, and FPN; the
vision stream is untouched. Masked-token features are pooled with RoIAlign
at the token box and classified back to the vocabulary; segment features
are pooled at the line box, projected, L2-normalized, and contrastively
aligned to frozen text-derived pseudo-target vectors with in-batch
negatives. The two losses are summed with unit weights.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from vgt import tensor as T
from vgt import grid as G
from vgt import roi
from vgt.doc import DocPage, Vocab, tokenize
from vgt.model import VGTModel
from vgt.params import AdamWConfig, ParamStore
from vgt.tensor import Tensor

@dataclass
class PretrainConfig:
    mask_ratio: float = 0.15
    tau: float = 0.01
    n_segments: int = 64          # N_S
    target_dim: int = 32
    target_seed: int = 7919
    mglm_hidden: int = 64
    mglm_weight: float = 1.0
    slm_weight: float = 1.0


def init_pretrain_heads(store: ParamStore, hidden: int, vocab_size: int,
                        cfg: PretrainConfig, rng: np.random.Generator,
                        sigma: float = 0.02) -> None:
    store.add("mglm.w1", Tensor(rng.standard_normal((hidden, cfg.mglm_hidden)) * sigma))
    store.add("mglm.b1", Tensor(np.zeros(cfg.mglm_hidden)))
    store.add("mglm.w2", Tensor(rng.standard_normal((cfg.mglm_hidden, vocab_size)) * sigma))
    store.add("mglm.b2", Tensor(np.zeros(vocab_size)))
    store.add("slm.w", Tensor(rng.standard_normal((hidden, cfg.target_dim)) * sigma))
    store.add("slm.b", Tensor(np.zeros(cfg.target_dim)))


class PseudoTargetProvider:
    """Frozen random-projection bag-of-tokens embedder standing in for an
    external language model. Deterministic: row k is seeded by the token id,
    a segment maps to the L2-normalized sum of its token rows."""

    def __init__(self, dim: int, seed: int = 7919):
        self.dim = dim
        self.seed = seed
        self._rows: dict[int, np.ndarray] = {}

    def row(self, token_id: int) -> np.ndarray:
        cached = self._rows.get(token_id)
        if cached is None:
            rng = np.random.default_rng((self.seed, token_id))
            cached = self._rows[token_id] = rng.standard_normal(self.dim)
        return cached

    def for_ids(self, token_ids) -> np.ndarray | None:
        if len(token_ids) == 0:
            return None
        vec = np.sum([self.row(t) for t in token_ids], axis=0)
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            return None
        return vec / norm

    def for_text(self, text: str, vocab: Vocab) -> np.ndarray | None:
        ids = []
        for word in text.split():
            ids.extend(tokenize(word, vocab))
        return self.for_ids(ids)


def _p2_stride(p2: Tensor, page_size: int) -> float:
    return page_size / p2.shape[0]


def _pool_box(p2: Tensor, box, stride: float, bins: int) -> Tensor:
    feats = roi.roi_align(p2, box, stride=stride, bins=bins)
    return T.reshape(feats.mean(axis=(0, 1)), (1, feats.shape[2]))


def mglm_logits(p2: Tensor, boxes, stride: float, store: ParamStore) -> Tensor:
    """RoI-pool each masked-token box on the finest level and classify."""
    pooled = T.concat([_pool_box(p2, b, stride, roi.BINS_TOKEN) for b in boxes], axis=0)
    h = T.gelu(T.matmul(pooled, store["mglm.w1"]) + store["mglm.b1"])
    return T.matmul(h, store["mglm.w2"]) + store["mglm.b2"]


def mglm_loss(p2: Tensor, page: DocPage, plan: G.MaskPlan,
              store: ParamStore) -> tuple[Tensor | None, float]:
    """Mean negative log-likelihood of the original ids at masked positions.

    Returns (loss, top-1 accuracy); loss is None when nothing was selected.
    Boxes come from the pre-mask page so targets pair with original ids."""
    if len(plan) == 0:
        return None, float("nan")
    boxes = [page.tokens[idx].box for idx, _, _ in plan.entries]
    targets = np.array([orig for _, _, orig in plan.entries])
    logits = mglm_logits(p2, boxes, _p2_stride(p2, page.page_h), store)
    lse = T.logsumexp(logits, axis=-1)
    picked = logits[(np.arange(len(targets)), targets)]
    loss = (lse - picked).mean()
    acc = float((logits.data.argmax(axis=-1) == targets).mean())
    return loss, acc


def segment_features(p2: Tensor, boxes, store: ParamStore,
                     stride: float | None = None) -> Tensor:
    """Pooled, projected, L2-normalized segment features (N, target_dim)."""
    pooled = T.concat([_pool_box(p2, b, stride or 4.0, roi.BINS_SEGMENT)
                       for b in boxes], axis=0)
    e = T.matmul(pooled, store["slm.w"]) + store["slm.b"]
    sq = (e * e).sum(axis=-1, keepdims=True)
    return e * T.power(sq + 1e-24, -0.5)


def slm_loss(features: Tensor, targets: np.ndarray, tau: float) -> Tensor:
    """Contrastive alignment of features to their paired unit pseudo-targets;
    negatives are the other in-batch targets."""
    if tau <= 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    n = features.shape[0]
    if n < 2:
        raise ValueError("slm_loss needs at least 2 segments for negatives")
    sims = T.matmul(features, Tensor(targets.T)) * (1.0 / tau)
    lse = T.logsumexp(sims, axis=-1)
    pos = sims[(np.arange(n), np.arange(n))]
    return (lse - pos).mean()


@dataclass
class StepStats:
    mglm: float
    slm: float
    total: float
    mglm_acc: float
    n_masked: int
    n_segments: int
    stepped: bool


def pretrain_forward(pages: list[DocPage], model: VGTModel, cfg: PretrainConfig,
                     provider: PseudoTargetProvider, vocab: Vocab, seed: int,
                     collect=None) -> tuple[Tensor | None, StepStats]:
    """Masked forward over a batch of pages; returns (total loss, stats).

    `collect`, when given, receives (page, segment boxes, feature Tensor,
    target matrix) per batch for evaluation hooks."""
    rng = np.random.default_rng(seed)
    size = model.cfg.image_size
    mglm_terms: list[Tensor] = []
    accs: list[float] = []
    n_masked = 0
    feats_parts: list[Tensor] = []
    target_parts: list[np.ndarray] = []

    for page in pages:
        masked_tokens, plan = G.apply_mglm_mask(
            page, cfg.mask_ratio, seed=int(rng.integers(2 ** 62)),
            vocab_size=model.cfg.vocab_size)
        masked_page = DocPage(page_h=page.page_h, page_w=page.page_w,
                              words=page.words, tokens=masked_tokens,
                              image=page.image, segments=page.segments)
        p2 = model.forward_page(masked_page)[2]

        loss_m, acc = mglm_loss(p2, page, plan, store=model.store)
        if loss_m is not None:
            mglm_terms.append(loss_m * len(plan))
            n_masked += len(plan)
            accs.append(acc * len(plan))

        segs = [(t, b) for t, b in page.segments]
        if len(segs) > cfg.n_segments:
            keep = rng.choice(len(segs), size=cfg.n_segments, replace=False)
            segs = [segs[i] for i in sorted(keep)]
        seg_targets = []
        seg_boxes = []
        for text, box in segs:
            vec = provider.for_text(text, vocab)
            if vec is not None:
                seg_targets.append(vec)
                seg_boxes.append(box)
        if seg_boxes:
            feats = segment_features(p2, seg_boxes, model.store,
                                     stride=_p2_stride(p2, size))
            feats_parts.append(feats)
            target_parts.append(np.stack(seg_targets))
            if collect is not None:
                collect(page, seg_boxes, feats, np.stack(seg_targets))

    terms: list[Tensor] = []
    l_mglm = float("nan")
    if n_masked:
        mglm_total = mglm_terms[0] if len(mglm_terms) == 1 else _sum_tensors(mglm_terms)
        mglm_mean = mglm_total * (1.0 / n_masked)
        terms.append(mglm_mean * cfg.mglm_weight)
        l_mglm = mglm_mean.item()

    n_seg = sum(t.shape[0] for t in feats_parts)
    l_slm = float("nan")
    if n_seg >= 2:
        feats = feats_parts[0] if len(feats_parts) == 1 else T.concat(feats_parts, axis=0)
        slm = slm_loss(feats, np.concatenate(target_parts), cfg.tau)
        terms.append(slm * cfg.slm_weight)
        l_slm = slm.item()

    total = None
    if terms:
        total = terms[0] if len(terms) == 1 else terms[0] + terms[1]
    stats = StepStats(
        mglm=l_mglm, slm=l_slm,
        total=total.item() if total is not None else 0.0,
        mglm_acc=(sum(accs) / n_masked) if n_masked else float("nan"),
        n_masked=n_masked, n_segments=n_seg, stepped=False)
    return total, stats


def _sum_tensors(ts: list[Tensor]) -> Tensor:
    acc = ts[0]
    for t in ts[1:]:
        acc = acc + t
    return acc


def pretrain_step(pages: list[DocPage], model: VGTModel, cfg: PretrainConfig,
                  provider: PseudoTargetProvider, vocab: Vocab,
                  opt: AdamWConfig, seed: int) -> StepStats:
    """One optimizer step on L_MGLM + L_SLM; a batch contributing neither
    loss leaves parameters untouched."""
    total, stats = pretrain_forward(pages, model, cfg, provider, vocab, seed)
    if total is None:
        return stats
    model.store.zero_grads()
    total.backward()
    for name, p in model.store.items():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    model.store.adamw_step(opt)
    stats.stepped = True
    return stats


def run_pretrain(pages: list[DocPage], model: VGTModel, cfg: PretrainConfig,
                 vocab: Vocab, opt: AdamWConfig, steps: int, batch_size: int,
                 seed: int, log_path: str | None = None,
                 log_every: int = 20) -> list[StepStats]:
    """Deterministic pre-training loop over a fixed page corpus."""
    provider = PseudoTargetProvider(cfg.target_dim, cfg.target_seed)
    rng = np.random.default_rng(seed)
    history = []
    rows = []
    for step in range(1, steps + 1):
        idx = rng.choice(len(pages), size=min(batch_size, len(pages)), replace=False)
        batch = [pages[i] for i in idx]
        stats = pretrain_step(batch, model, cfg, provider, vocab, opt,
                              seed=int(rng.integers(2 ** 62)))
        history.append(stats)
        if log_path and (step % log_every == 0 or step == steps or step == 1):
            rows.append((step, f"{stats.mglm:.6f}", f"{stats.slm:.6f}",
                         f"{stats.total:.6f}", f"{stats.mglm_acc:.4f}"))
    if log_path:
        with open(log_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(("step", "mglm", "slm", "total", "mglm_acc"))
            writer.writerows(rows)
    return history
