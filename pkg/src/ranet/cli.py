"""Command-line surface: gen / train / eval / infer / ra.

Exit codes: 0 success, 1 usage error, 2 data or format error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .autodiff import ShapeError
from .bayes import BayesParams
from .core import (
    DensityMap,
    FormatError,
    GrayImage,
    load_image,
    save_density,
    save_image,
)
from .datagen import SceneSpec, gen_dataset, load_split
from .evaluate import evaluate_checkpoint
from .network import NetConfig, predict
from .region_aware import RAConfig, enhance
from .training import TrainConfig, TrainingError, load_checkpoint, save_checkpoint, train

USAGE_ERROR = 1
DATA_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we reserve that
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ranet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--train", type=int, default=200)
    p_gen.add_argument("--test", type=int, default=50)
    p_gen.add_argument("--width", type=int, default=64)
    p_gen.add_argument("--height", type=int, default=64)
    p_gen.add_argument("--min-heads", type=int, default=1)
    p_gen.add_argument("--max-heads", type=int, default=15)
    p_gen.add_argument("--noise", type=float, default=0.05)

    p_train = sub.add_parser("train", help="train on a generated dataset")
    p_train.add_argument("--data", required=True, help="dataset directory (with manifest.json)")
    p_train.add_argument("--out", required=True, help="checkpoint path to write")
    p_train.add_argument("--epochs", type=int, default=30)
    p_train.add_argument("--lr", type=float, default=TrainConfig.lr)
    p_train.add_argument("--batch", type=int, default=8)
    p_train.add_argument("--crop", type=int, default=64)
    p_train.add_argument("--delta", type=float, default=16.0,
                         help="Gaussian spread of the point-supervision loss, pixels")
    p_train.add_argument("--d-ratio", type=float, default=0.1,
                         help="background margin as a fraction of the shorter crop side")
    p_train.add_argument("--ra-temp", type=float, default=1.0)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--single-thread", action="store_true",
                         help="sequential sample evaluation (the default and only mode)")
    p_train.add_argument("--two-tower", action="store_true",
                         help="separate pass-2 backbone weights")
    p_train.add_argument("--log", metavar="CSV", default=None)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--split", choices=("train", "test"), required=True)
    p_eval.add_argument("-v", "--verbose", action="store_true")

    p_infer = sub.add_parser("infer", help="run inference on one image")
    p_infer.add_argument("--ckpt", required=True)
    p_infer.add_argument("--image", required=True)
    p_infer.add_argument("--out", required=True, help="density map path (RADM)")
    p_infer.add_argument("--viz", default=None, help="optional grayscale rendering (PGM)")
    p_infer.add_argument("--pad", action="store_true",
                         help="reflect-pad sides to a multiple of 8, crop the density back")

    p_ra = sub.add_parser("ra", help="apply the region-aware block to an image pair")
    p_ra.add_argument("--image", required=True)
    p_ra.add_argument("--priority", required=True)
    p_ra.add_argument("--out", required=True)
    p_ra.add_argument("--diff", default=None, help="optional |out - in| rendering (PGM)")
    p_ra.add_argument("--temp", type=float, default=1.0)
    return parser


def _cmd_gen(args) -> int:
    spec = SceneSpec(
        width=args.width,
        height=args.height,
        min_heads=args.min_heads,
        max_heads=args.max_heads,
        noise=args.noise,
        seed=args.seed,
    )
    manifest = gen_dataset(spec, args.train, args.test, args.out)
    print(f"wrote {args.train} train / {args.test} test scenes; manifest at {manifest}")
    return 0


def _cmd_train(args) -> int:
    # context-pool grids must fit the stride-8 feature map of the crop
    feature_side = args.crop // 8
    grids = tuple(g for g in NetConfig.pool_grids if g <= feature_side) or (1,)
    cfg = TrainConfig(
        lr=args.lr,
        batch_size=args.batch,
        crop=args.crop,
        epochs=args.epochs,
        bayes=BayesParams(delta=args.delta, d_ratio=args.d_ratio),
        net=NetConfig(
            pool_grids=grids,
            ra=RAConfig(temperature=args.ra_temp),
            seed=args.seed,
            two_tower=args.two_tower,
        ),
        seed=args.seed,
    )
    scenes = load_split(Path(args.data) / "manifest.json", "train")
    params, _ = train(scenes, cfg, log_path=args.log)
    save_checkpoint(params, cfg, args.out)
    print(f"checkpoint written to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    report = evaluate_checkpoint(args.ckpt, Path(args.data) / "manifest.json", args.split)
    if args.verbose:
        for line in report.per_image_lines():
            print(line)
    print(report.summary())
    return 0


def _pad_to_multiple_of_8(pixels: np.ndarray) -> tuple[np.ndarray, int, int]:
    h, w = pixels.shape
    ph = (-h) % 8 if h >= 16 else 16 - h
    pw = (-w) % 8 if w >= 16 else 16 - w
    return np.pad(pixels, ((0, ph), (0, pw)), mode="reflect"), h, w


def _cmd_infer(args) -> int:
    params, cfg = load_checkpoint(args.ckpt)
    img = load_image(args.image)
    pixels = img.pixels
    h, w = pixels.shape
    if h % 8 or w % 8 or h < 16 or w < 16:
        if not args.pad:
            need_h = max(-(-h // 8) * 8, 16)
            need_w = max(-(-w // 8) * 8, 16)
            raise ShapeError(
                f"image is {h}x{w}; pass --pad to reflect-pad to {need_h}x{need_w}"
            )
        padded, h, w = _pad_to_multiple_of_8(pixels)
        dmap, _ = predict(GrayImage(padded), params, cfg.net)
        density = dmap.values[:h, :w]
    else:
        dmap, _ = predict(img, params, cfg.net)
        density = dmap.values
    out_map = DensityMap(density)
    save_density(out_map, args.out)
    if args.viz:
        peak = float(density.max())
        rendered = density / peak if peak > 0 else np.zeros_like(density)
        save_image(GrayImage(rendered.astype(np.float64)), args.viz)
    print(f"count={out_map.count:.6f}")
    return 0


def _cmd_ra(args) -> int:
    image = load_image(args.image)
    priority = load_image(args.priority)
    if image.pixels.shape != priority.pixels.shape:
        raise ShapeError(
            f"image is {image.pixels.shape}, priority map is {priority.pixels.shape}"
        )
    enhanced = enhance(image.pixels, priority.pixels, RAConfig(temperature=args.temp))
    save_image(GrayImage(np.clip(enhanced, 0.0, 1.0)), args.out)
    if args.diff:
        diff = np.abs(enhanced - image.pixels)
        peak = float(diff.max())
        rendering = diff / peak if peak > 0 else np.zeros_like(diff)
        save_image(GrayImage(rendering), args.diff)
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "ra": _cmd_ra,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_ERROR
    try:
        return _COMMANDS[args.command](args)
    except (FormatError, FileNotFoundError, IsADirectoryError, ShapeError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
