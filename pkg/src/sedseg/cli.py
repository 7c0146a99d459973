"""Command-line entry point: ``sedseg {train,infer,eval,bench,synth}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .bench import benchmark_image, evaluate, summarize
from .config import CerConfig, ModelConfig, TrainConfig, load_config
from .data import Dataset, QuadrantWorld, load_dataset, make_block_dataset, save_dataset
from .imageio import read_ppm, write_label
from .text import DEFAULT_TEMPLATES, CategoryVocabulary, read_templates
from .train import CONFIG_NAME, dataset_embeddings, load_model, train

log = logging.getLogger("sedseg")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--kernel", type=int, choices=(7, 9, 11), help="FAM depthwise kernel size")
    p.add_argument("--layers", type=int, choices=(1, 2, 3), help="decoder depth")
    p.add_argument("--no-spatial", action="store_true", help="disable the FAM spatial branch")
    p.add_argument("--no-class", action="store_true", help="disable FAM class attention")
    p.add_argument("--embeddings", type=Path, help="SEDE text embedding file")


def _add_cer_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cer-k", help="top-k for category early rejection: an integer or 'all'; omit to disable")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sedseg", description="Open-vocabulary segmentation with a cost-map decoder.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a dataset directory")
    _add_model_flags(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory for checkpoints and loss curve")
    p.add_argument("--iters", type=int)
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")

    p = sub.add_parser("infer", help="segment one image")
    _add_model_flags(p)
    _add_cer_flag(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--categories", type=Path, required=True)
    p.add_argument("--templates", type=Path)
    p.add_argument("--output", type=Path, required=True, help="label map path (suffix set by category count)")
    p.add_argument("--report", type=Path, help="append the JSON report line here instead of stdout")

    p = sub.add_parser("eval", help="mIoU over a dataset directory")
    _add_model_flags(p)
    _add_cer_flag(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)

    p = sub.add_parser("bench", help="per-image timing and mIoU as JSON lines")
    _add_model_flags(p)
    _add_cer_flag(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--limit", type=int, help="only the first N images")
    p.add_argument("--report", type=Path, help="write JSON lines here instead of stdout")

    p = sub.add_parser("synth", help="write a synthetic dataset directory")
    p.add_argument("kind", choices=("blocks", "quadrants"))
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--images", type=int, default=8)
    p.add_argument("--categories", type=int, help="category count (blocks: 4, quadrants: 847)")
    p.add_argument("--size", type=int, help="image side (blocks: 64, quadrants: 128)")
    p.add_argument("--seed", type=int, default=0)
    return ap


def resolve_config(args) -> tuple[ModelConfig, TrainConfig, CerConfig]:
    path = args.config
    if path is None and getattr(args, "checkpoint", None) is not None:
        side = args.checkpoint.parent / CONFIG_NAME
        path = side if side.exists() else None
    model, train_cfg, cer = load_config(path)
    if args.kernel is not None:
        model.fam = dataclasses.replace(model.fam, dw_kernel=args.kernel)
    if args.layers is not None:
        model.decoder = dataclasses.replace(model.decoder, layers=args.layers)
    if args.no_spatial:
        model.fam = dataclasses.replace(model.fam, enable_spatial=False)
    if args.no_class:
        model.fam = dataclasses.replace(model.fam, enable_class=False)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    if getattr(args, "cer_k", None) is not None:
        cer = CerConfig(k=CerConfig.parse_k(args.cer_k), enabled=True)
    return model, train_cfg, cer


def cmd_train(args) -> int:
    model, train_cfg, _ = resolve_config(args)
    ds = load_dataset(args.data)
    emb = dataset_embeddings(ds, model, args.embeddings, train_cfg.seed)
    state = train(model, train_cfg, ds, emb, args.out, resume=args.resume, iters=args.iters)
    print(json.dumps({"iterations": state.iteration, "final_loss": state.losses[-1] if state.losses else None}))
    return 0


def cmd_infer(args) -> int:
    model, train_cfg, cer = resolve_config(args)
    vocab = CategoryVocabulary.from_file(args.categories)
    templates = read_templates(args.templates) if args.templates else list(DEFAULT_TEMPLATES[: model.num_templates])
    ds = Dataset([], vocab, templates)
    emb = dataset_embeddings(ds, model, args.embeddings, train_cfg.seed)
    params = load_model(args.checkpoint, model)
    image = read_ppm(args.image)
    pred, report = benchmark_image(image, emb, model, params, cer.k, cer.enabled, args.image.name, runs=1, warmup=0)
    out = write_label(args.output, pred, len(vocab))
    line = report.to_json()
    if args.report:
        with open(args.report, "a") as f:
            f.write(line + "\n")
    else:
        print(line)
    log.info("wrote %s", out)
    return 0


def cmd_eval(args) -> int:
    model, train_cfg, cer = resolve_config(args)
    ds = load_dataset(args.data)
    emb = dataset_embeddings(ds, model, args.embeddings, train_cfg.seed)
    params = load_model(args.checkpoint, model)
    miou, per_class, acc = evaluate(ds, emb, model, params, cer.k, cer.enabled)
    print(json.dumps({"miou": miou, "pixels": acc.total, "images": len(ds)}))
    return 0


def cmd_bench(args) -> int:
    model, train_cfg, cer = resolve_config(args)
    ds = load_dataset(args.data)
    emb = dataset_embeddings(ds, model, args.embeddings, train_cfg.seed)
    params = load_model(args.checkpoint, model)
    samples = ds.samples[: args.limit] if args.limit else ds.samples
    reports = []
    out = open(args.report, "w") if args.report else sys.stdout
    try:
        for s in samples:
            _, rep = benchmark_image(
                s.image, emb, model, params, cer.k, cer.enabled, s.name, s.label, args.runs, args.warmup
            )
            reports.append(rep)
            out.write(rep.to_json() + "\n")
            out.flush()
    finally:
        if out is not sys.stdout:
            out.close()
    log.info("summary %s", json.dumps(summarize(reports)))
    return 0


def cmd_synth(args) -> int:
    if args.kind == "blocks":
        ds = make_block_dataset(args.images, args.categories or 4, args.size or 64, seed=args.seed)
        save_dataset(args.out, ds)
    else:
        world = QuadrantWorld.build(n=args.categories or 847, seed=args.seed)
        ds = world.dataset(args.images, size=args.size or 128, seed=args.seed + 1)
        save_dataset(args.out, ds, world.embeddings)
    print(json.dumps({"out": str(args.out), "images": len(ds), "categories": len(ds.vocab)}))
    return 0


COMMANDS = {"train": cmd_train, "infer": cmd_infer, "eval": cmd_eval, "bench": cmd_bench, "synth": cmd_synth}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError) as e:
        print(f"sedseg: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
