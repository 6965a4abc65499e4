"""Command-line entry point: ``hcmseg {train,eval,predict,score}``."""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import metrics
from .config import ConfigError, TrainConfig, dump_config, load_config, parse_overrides
from .data import IMAGE_EXTS, DataError, load_mask, scan

EXIT_RUNTIME, EXIT_CONFIG, EXIT_DATA = 1, 2, 3

logger = logging.getLogger("hcmseg")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hcmseg", description="Concealed object segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _common(p)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _common(p)
    p.add_argument("--out", help="directory for metrics.txt / metrics.json / per_image.csv")

    p = sub.add_parser("predict", help="export sigmoid(p1) maps as 8-bit PNGs")
    _common(p)
    p.add_argument("--images", help="image directory (default: <data_root>/<test_split>/images)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("score", help="score a directory of prediction maps against masks")
    p.add_argument("--pred", required=True, help="prediction map directory")
    p.add_argument("--gt", required=True, help="ground-truth mask directory")
    p.add_argument("--out", help="directory for metrics.txt / metrics.json / per_image.csv")
    p.add_argument("--name", default="", help="dataset label for the table")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args) -> TrainConfig:
    overrides = parse_overrides(args.overrides)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return load_config(args.config, overrides)


def _require(config: TrainConfig, *keys: str) -> None:
    for key in keys:
        if getattr(config, key) in (None, ""):
            raise ConfigError(f"missing required config key '{key}'")


def _images_in(directory: Path) -> List[Path]:
    if not directory.is_dir():
        raise DataError(f"directory {directory} does not exist")
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_EXTS)


def cmd_train(args) -> int:
    from .engine import load_checkpoint, train

    config = _config(args)
    _require(config, "data_root")
    manifest = scan(config.data_root, config.train_split)
    resume = load_checkpoint(args.resume) if args.resume else None
    Path(config.checkpoint_dir).mkdir(parents=True, exist_ok=True)
    dump_config(config, Path(config.checkpoint_dir) / "config.yaml")
    ckpt = train(config, manifest, resume=resume)
    last = ckpt.history[-1] if ckpt.history else None
    print(f"trained {ckpt.epoch} epoch(s) on {len(manifest)} image(s)")
    if last:
        print(f"final loss {last['total']:.6f} at step {last['step']}")
    print(f"checkpoint: {Path(config.checkpoint_dir) / 'last.pt'}")
    return 0


def cmd_eval(args) -> int:
    from .engine import evaluate_detailed, load_checkpoint

    config = _config(args)
    _require(config, "checkpoint", "data_root")
    ckpt = load_checkpoint(config.checkpoint)
    manifest = scan(config.data_root, config.test_split)
    report, per_image = evaluate_detailed(ckpt, manifest, config.input_size)
    name = f"{Path(config.data_root).name}/{config.test_split}"
    print(metrics.format_table(report, name))
    if args.out:
        metrics.write_report(report, args.out, name, per_image)
    return 0


def cmd_predict(args) -> int:
    from .engine import load_checkpoint, predict_to_png

    config = _config(args)
    _require(config, "checkpoint")
    if args.images:
        images = _images_in(Path(args.images))
    else:
        _require(config, "data_root")
        images = _images_in(Path(config.data_root) / config.test_split / "images")
    if not images:
        raise DataError("no input images found")
    written = predict_to_png(load_checkpoint(config.checkpoint), images, args.out, config.input_size)
    print(f"wrote {len(written)} prediction map(s) to {args.out}")
    return 0


def load_score_map(path: Path, shape) -> np.ndarray:
    """Grayscale prediction map scaled to [0, 1], bilinearly resized to ``shape`` if needed."""
    from PIL import Image

    with Image.open(path) as im:
        gray = im.convert("L")
        if gray.size != (shape[1], shape[0]):
            arr = np.asarray(gray, dtype=np.float32)
            gray = Image.fromarray(arr, mode="F").resize((shape[1], shape[0]), Image.BILINEAR)
        arr = np.asarray(gray, dtype=np.float64)
    return np.clip(arr / 255.0, 0.0, 1.0)


def cmd_score(args) -> int:
    preds = {p.stem: p for p in _images_in(Path(args.pred))}
    gts = {p.stem: p for p in _images_in(Path(args.gt))}
    common = sorted(preds.keys() & gts.keys())
    if not common:
        raise DataError(f"no prediction/mask pairs with matching stems in {args.pred} and {args.gt}")
    for stem in sorted(preds.keys() ^ gts.keys()):
        print(f"warning: unmatched stem {stem}", file=sys.stderr)
    per_image = []
    for stem in common:
        gt = load_mask(gts[stem])
        per_image.append((stem, metrics.score_image(load_score_map(preds[stem], gt.shape), gt)))
    report = metrics.aggregate(sc for _, sc in per_image)
    print(metrics.format_table(report, args.name))
    if args.out:
        metrics.write_report(report, args.out, args.name, per_image)
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "score": cmd_score}


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())
