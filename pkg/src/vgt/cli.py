"""Command-line entry point: corpus synthesis, grid inspection, pre-training,
detector training, and evaluation.

All commands take ``--config`` (key-value file, see vgt.config), ``--seed``
and ``--out`` overrides, and are deterministic for a fixed seed/config. The
float precision is selected by the VGT_PRECISION environment variable
(f32, the default, or f64).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from vgt import coco
from vgt import grid as G
from vgt import pretrain as PT
from vgt import train as TR
from vgt.config import RunConfig, parse_config, validate
from vgt.detect import init_head_params
from vgt.doc import DocPage, Vocab, load_ocr_page
from vgt.model import VGTModel, grid_only
from vgt.synth import SynthConfig, default_classes, make_synth_vocab, save_corpus


def load_run_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if getattr(args, "data", None):
        cfg.data_dir = args.data
    if getattr(args, "init", None):
        cfg.init_ckpt = args.init
    if getattr(args, "pages", None):
        cfg.pages = args.pages
    if getattr(args, "steps", None):
        cfg.steps = args.steps
    if getattr(args, "streams", None):
        cfg.streams = args.streams
    return validate(cfg)


def load_corpus(data_dir: str, cfg: RunConfig):
    """Corpus dir (from `synth`) -> (pages, annotations, dataset, vocab)."""
    vocab = Vocab.from_file(os.path.join(data_dir, "vocab.txt"))
    dataset = coco.load_coco(os.path.join(data_dir, "annotations.json"))
    pages, annotations = [], []
    for im in dataset.images:
        stem = os.path.splitext(im.file_name)[0]
        pages.append(load_ocr_page(os.path.join(data_dir, stem + ".json"), vocab))
        annotations.append(im.annotations)
    return pages, annotations, dataset, vocab


def cmd_synth(args) -> int:
    cfg = load_run_config(args)
    vocab = make_synth_vocab(cfg.vocab_size)
    size = cfg.image_size
    scfg = SynthConfig(page_size=size, region_min=max(6, size // 4),
                       region_max=max(8, size * 7 // 16),
                       classes=default_classes(vocab))
    save_corpus(cfg.out_dir, scfg, vocab, n_pages=cfg.pages, seed=cfg.seed)
    print(f"wrote {cfg.pages} pages to {cfg.out_dir}")
    return 0


def cmd_grid_dump(args) -> int:
    cfg = load_run_config(args)
    vocab = Vocab.from_file(args.vocab)
    page = load_ocr_page(args.page, vocab)
    ids = G.build_token_id_grid(page, page.page_h, page.page_w)
    os.makedirs(cfg.out_dir, exist_ok=True)
    stem = os.path.join(cfg.out_dir,
                        os.path.splitext(os.path.basename(args.page))[0] + "_grid")
    G.dump_grid_csv(ids, stem + ".csv")
    G.dump_grid_png(ids, stem + ".png")
    print(f"wrote {stem}.csv and {stem}.png")
    return 0


def cmd_pretrain(args) -> int:
    cfg = load_run_config(args)
    if not cfg.data_dir:
        raise ValueError("pretrain needs data_dir (corpus from `synth`)")
    pages, _, _, vocab = load_corpus(cfg.data_dir, cfg)
    model = VGTModel(grid_only(cfg.model_config()), seed=cfg.seed)
    pc = cfg.pretrain_config()
    PT.init_pretrain_heads(model.store, cfg.hidden, cfg.vocab_size, pc,
                           np.random.default_rng(cfg.seed + 1))
    os.makedirs(cfg.out_dir, exist_ok=True)
    history = PT.run_pretrain(pages, model, pc, vocab, cfg.adamw_config(),
                              steps=cfg.steps, batch_size=cfg.batch_size,
                              seed=cfg.seed,
                              log_path=os.path.join(cfg.out_dir, "pretrain_log.csv"),
                              log_every=cfg.log_every)
    ckpt = os.path.join(cfg.out_dir, "pretrain.ckpt")
    model.store.save(ckpt)
    last = history[-1]
    print(f"pretrain done: {cfg.steps} steps, final total {last.total:.4f}, "
          f"masked-token acc {last.mglm_acc:.3f}; checkpoint {ckpt}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    if not cfg.data_dir:
        raise ValueError("train needs data_dir (corpus from `synth`)")
    pages, annotations, dataset, _ = load_corpus(cfg.data_dir, cfg)
    mcfg = cfg.model_config()
    if dataset.num_classes() != mcfg.num_classes:
        mcfg = replace(mcfg, num_classes=dataset.num_classes())
    model = VGTModel(mcfg, seed=cfg.seed)
    init_head_params(model.store, cfg.hidden, mcfg.num_classes,
                     np.random.default_rng(cfg.seed + 2))
    if cfg.init_ckpt:
        report = TR.load_pretrained(model, cfg.init_ckpt)
        print(f"loaded {len(report['loaded'])} params from {cfg.init_ckpt}; "
              f"missing {report['missing'] or 'none'}, extra {report['extra'] or 'none'}")
    os.makedirs(cfg.out_dir, exist_ok=True)
    history = TR.train_detector(model, pages, annotations, cfg.adamw_config(),
                                steps=cfg.steps, batch_size=cfg.batch_size,
                                seed=cfg.seed,
                                log_path=os.path.join(cfg.out_dir, "train_log.csv"),
                                log_every=cfg.log_every)
    ckpt = os.path.join(cfg.out_dir, "detector.ckpt")
    model.store.save(ckpt)
    print(f"train done: {cfg.steps} steps, final loss {history[-1].loss:.4f}; "
          f"checkpoint {ckpt}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_run_config(args)
    if not cfg.data_dir:
        raise ValueError("eval needs data_dir (corpus from `synth`)")
    pages, annotations, dataset, _ = load_corpus(cfg.data_dir, cfg)
    mcfg = cfg.model_config()
    if dataset.num_classes() != mcfg.num_classes:
        mcfg = replace(mcfg, num_classes=dataset.num_classes())
    model = VGTModel(mcfg, seed=cfg.seed)
    init_head_params(model.store, cfg.hidden, mcfg.num_classes,
                     np.random.default_rng(cfg.seed + 2))
    if args.ckpt:
        model.store.load(args.ckpt)
    os.makedirs(cfg.out_dir, exist_ok=True)
    results = []
    preds = {}
    for i, page in enumerate(pages):
        dets = TR.predict_page(model, page, cfg.score_thresh, cfg.nms_thresh)
        preds[i] = dets
        for d in dets:
            results.append({"image_id": dataset.images[i].image_id,
                            "class_id": d.class_id, "box": d.box, "score": d.score})
    from vgt.mapeval import evaluate_map
    metrics = evaluate_map(preds, {i: annotations[i] for i in range(len(pages))},
                           mcfg.num_classes)
    coco.save_results(os.path.join(cfg.out_dir, "results.json"), results,
                      dataset.original_ids)
    report = {"map": metrics["map"], "ap50": metrics["ap50"], "ap75": metrics["ap75"],
              "per_class": {dataset.class_names[c]: v
                            for c, v in metrics["per_class"].items()}}
    with open(os.path.join(cfg.out_dir, "metrics.json"), "w", encoding="utf-8") as f:
        json.dump(report, f, indent=1, sort_keys=True)
        f.write("\n")
    print(f"eval done: mAP {metrics['map']:.4f} "
          f"(AP50 {metrics['ap50']:.4f}, AP75 {metrics['ap75']:.4f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vgt",
                                     description="two-stream document layout pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key-value config file")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--out", help="override output directory")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--pages", type=int, help="number of pages")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("grid-dump", help="dump the token-id grid of one page")
    common(p)
    p.add_argument("page", help="OCR-JSON page file")
    p.add_argument("--vocab", required=True, help="vocabulary file")
    p.set_defaults(fn=cmd_grid_dump)

    p = sub.add_parser("pretrain", help="pre-train the grid stream")
    common(p)
    p.add_argument("--data", help="corpus directory")
    p.add_argument("--steps", type=int, help="override step count")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("train", help="fine-tune the detector")
    common(p)
    p.add_argument("--data", help="corpus directory")
    p.add_argument("--steps", type=int, help="override step count")
    p.add_argument("--init", help="pre-training checkpoint to initialize from")
    p.add_argument("--streams", choices=("both", "vision", "grid"))
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a detector checkpoint")
    common(p)
    p.add_argument("--data", help="corpus directory")
    p.add_argument("--ckpt", help="detector checkpoint")
    p.add_argument("--streams", choices=("both", "vision", "grid"))
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
