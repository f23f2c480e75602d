"""Command-line entry point: synth, stats, train, infer, eval, selftest.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
Verbosity is read from ``DAMAGESEG_LOG`` (e.g. ``DEBUG``), default ``INFO``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import traceback
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch
import yaml

from .config import ConfigError, RunConfig, load_config, override
from .datamodel import compute_class_frequencies, load_dataset, read_image, read_mask, write_mask
from .inference import predict
from .metrics import ConfusionMatrix, report
from .synth import write_synthetic_split
from .tiler import argmax_mask, plan_tiles, pad_to_tile
from .trainer import load_model, train

log = logging.getLogger("damageseg")


def _set_determinism(deterministic: bool, workers: int | None) -> None:
    if deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def _run_dir(cfg: RunConfig, explicit: str | None) -> Path:
    if explicit:
        root = Path(explicit)
    else:
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
        root = Path(cfg.paths.run_root) / stamp
    for sub in ("checkpoints", "logs", "preds", "metrics"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    return root


# --- commands -----------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args) -> int:
    out = Path(args.out or cfg.paths.data_root)
    stems = write_synthetic_split(out, args.count, cfg.seed, args.split, cfg.synth.spec())
    print(f"wrote {len(stems)} scenes to {out / args.split}")
    return 0


def cmd_stats(cfg: RunConfig, args) -> int:
    index = load_dataset(args.data or cfg.paths.data_root, args.split)
    freq = compute_class_frequencies(index, cfg.classes)
    print(f"{len(index)} masks in split '{args.split}'")
    print(f"{'id':>3}  {'class':<28}{'pixels':>12}{'percent':>10}")
    for i, name, count, pct in freq.rows():
        flag = " *" if i in cfg.classes.rare_set else ""
        print(f"{i:>3}  {name:<28}{count:>12}{pct:>9.2f}%{flag}")
    if args.csv:
        freq.to_csv(args.csv)
        print(f"wrote {args.csv}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    cfg = override(cfg, "train", epochs=args.epochs, workers=1 if args.deterministic else args.workers,
                   lr0=args.lr)
    _set_determinism(args.deterministic, args.workers)
    index = load_dataset(args.data or cfg.paths.data_root, "train")
    run = _run_dir(cfg, args.run_dir)
    with open(run / "config.yaml", "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
    t0 = time.perf_counter()
    result = train(index, cfg.model, cfg.train, cfg.ohem, cfg.dice, cfg.sampler, cfg.augment,
                   out_dir=run, resume=args.resume, ignore_id=cfg.classes.ignore_id)
    last = result.log[-1] if result.log else {}
    print(f"trained {result.steps} steps in {time.perf_counter() - t0:.1f}s; "
          f"final loss_total={last.get('loss_total', float('nan')):.4f}")
    print(f"checkpoint: {result.checkpoints[-1]}")
    return 0


def _inputs(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".tif", ".tiff"))
        if not files:
            raise FileNotFoundError(f"no images in {path}")
        return files
    if not path.exists():
        raise FileNotFoundError(f"input {path} does not exist")
    return [path]


def cmd_infer(cfg: RunConfig, args) -> int:
    cfg = override(cfg, "tiles", tile_size=args.tile_size, stride=args.stride)
    _set_determinism(args.deterministic, args.workers)
    workers = 1 if args.deterministic else (args.workers or 1)
    model, _, _ = load_model(args.checkpoint)
    if model.config.num_classes != cfg.classes.num_classes:
        raise ConfigError("model.num_classes", "checkpoint class count differs from the class table")
    out = Path(args.out) if args.out else _run_dir(cfg, None) / "preds"
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for path in _inputs(Path(args.input)):
        image = read_image(path)
        t0 = time.perf_counter()
        probs = predict(model, image, cfg.tiles, workers)
        wall = time.perf_counter() - t0
        padded, _ = pad_to_tile(image, cfg.tiles.tile_size)
        grid = plan_tiles(padded.shape[0], padded.shape[1], cfg.tiles)
        write_mask(out / f"{path.stem}.png", argmax_mask(probs))
        if args.probs:
            pdir = out / f"{path.stem}_probs"
            pdir.mkdir(exist_ok=True)
            for c in range(probs.shape[-1]):
                write_mask(pdir / f"class_{c:02d}.png", np.rint(probs[..., c] * 255).astype(np.uint8))
        entries.append({
            "image": str(path),
            "prediction": str(out / f"{path.stem}.png"),
            "height": image.shape[0],
            "width": image.shape[1],
            "grid_rows": grid.shape[0],
            "grid_cols": grid.shape[1],
            "tile_count": len(grid),
            "wall_time_s": round(wall, 3),
        })
        print(f"{path.name}: {len(grid)} tiles ({grid.shape[0]}x{grid.shape[1]}) in {wall:.2f}s")
    manifest = {
        "checkpoint": str(args.checkpoint),
        "tile_size": cfg.tiles.tile_size,
        "stride": cfg.tiles.stride,
        "images": entries,
        "tile_count": sum(e["tile_count"] for e in entries),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return 0


def _mask_dir(path: Path) -> Path:
    return path / "masks" if (path / "masks").is_dir() else path


def cmd_eval(cfg: RunConfig, args) -> int:
    pred_dir, truth_dir = _mask_dir(Path(args.pred)), _mask_dir(Path(args.truth))
    truths = {p.stem: p for p in truth_dir.glob("*.png")}
    preds = {p.stem: p for p in pred_dir.glob("*.png")}
    missing = sorted(set(truths) - set(preds))
    if missing:
        raise FileNotFoundError(f"no prediction for {', '.join(missing[:5])}")
    if not truths:
        raise FileNotFoundError(f"no ground-truth masks in {truth_dir}")
    cm = ConfusionMatrix(cfg.classes.num_classes, cfg.classes.ignore_id)
    for stem in sorted(truths):
        cm.accumulate(read_mask(preds[stem]), read_mask(truths[stem]))
    out = Path(args.out) if args.out else pred_dir.parent / "metrics"
    out.mkdir(parents=True, exist_ok=True)
    doc = report(cm, cfg.classes, out / "metrics.csv", args.undefined)
    for row in doc["classes"]:
        iou = "  n/a" if row["iou"] is None else f"{100 * row['iou']:6.2f}"
        print(f"{row['class_id']:>3}  {row['name']:<28}{iou}")
    print(f"mIoU={100 * doc['miou']:.2f}")
    return 0


def cmd_selftest(cfg: RunConfig, args) -> int:
    from .selftest import run_all

    results = run_all(include_model=not args.quick)
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name:<16} {r.detail} ({r.seconds:.1f}s)")
    return 0 if all(r.passed for r in results) else 1


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="damageseg", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="override the top-level seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset split")
    p.add_argument("--count", type=int, required=True, help="number of scenes")
    p.add_argument("--out", help="dataset root (default: paths.data_root)")
    p.add_argument("--split", default="train", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", parents=[common], help="class pixel frequencies of a split")
    p.add_argument("--data", help="dataset root (default: paths.data_root)")
    p.add_argument("--split", default="train", choices=("train", "val", "test"))
    p.add_argument("--csv", help="also write class_id,name,pixel_count,percent CSV here")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", parents=[common], help="train on <data>/train")
    p.add_argument("--data", help="dataset root (default: paths.data_root)")
    p.add_argument("--run-dir", help="output directory (default: paths.run_root/<timestamp>)")
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--lr", type=float, help="override train.lr0")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--workers", type=int, help="crop-sampling threads")
    p.add_argument("--deterministic", action="store_true", help="single-threaded, bit-reproducible run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="sliding-window inference")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="image file or directory of images")
    p.add_argument("--out", help="prediction directory (default: a new run's preds/)")
    p.add_argument("--tile-size", type=int, help="override tiles.tile_size")
    p.add_argument("--stride", type=int, help="override tiles.stride")
    p.add_argument("--probs", action="store_true", help="also write per-class probability rasters")
    p.add_argument("--workers", type=int, help="tiles evaluated concurrently")
    p.add_argument("--deterministic", action="store_true", help="single-threaded, ordered merge")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="IoU / mIoU of predictions against ground truth")
    p.add_argument("--pred", required=True, help="directory of predicted masks")
    p.add_argument("--truth", required=True, help="ground-truth mask directory (or split directory)")
    p.add_argument("--out", help="metrics directory (default: <pred>/../metrics)")
    p.add_argument("--undefined", default="exclude", choices=("exclude", "zero"),
                   help="how classes absent from truth and prediction enter the mean")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftest", parents=[common], help="run oracle and invariant checks")
    p.add_argument("--quick", action="store_true", help="skip the model gradient check")
    p.set_defaults(func=cmd_selftest)
    return parser


def _module_tag(exc: BaseException) -> str:
    tag = "cli"
    for frame in traceback.extract_tb(exc.__traceback__):
        parts = Path(frame.filename).parts
        if "damageseg" in parts:
            tag = Path(frame.filename).stem
    return tag


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("DAMAGESEG_LOG", "INFO").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = override(cfg, None, seed=args.seed)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error [{_module_tag(exc)}]: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
