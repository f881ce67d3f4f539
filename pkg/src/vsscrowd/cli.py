"""``vsscrowd`` command line: train, evaluate, predict, synth-gen, bench-scaling.

Every command accepts ``--seed``. Failures exit with the code attached to the
error family (input 3, configuration 4, numeric 5); argparse usage errors exit 2.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .config import ModelConfig
from .data import AugmentConfig, env_threads, load_dataset, read_pnm, save_dataset, synth_generate, write_pnm
from .errors import ConfigurationError, InputError, NumericError, ParameterError, VsscrowdError
from .head import PointSet
from .model import CrowdCounter
from .scan import count_flops
from .tensor import Tensor, no_grad
from .train import evaluate, load_checkpoint, save_checkpoint, train

CHECKPOINT_NAME = "model.ckpt"
LOG_NAME = "train.log"


def _int_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _float_list(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _load_config(path: Optional[str], seed: Optional[int]) -> ModelConfig:
    cfg = ModelConfig.load(path) if path else ModelConfig()
    if seed is not None:
        cfg.seed = seed
    return cfg.validate()


def _emit(text: str, out: Optional[str]) -> None:
    sys.stdout.write(text)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")


# -- commands ------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _load_config(args.config, args.seed)
    samples = load_dataset(args.data, args.split)
    if not samples:
        raise ParameterError(f"{args.data}: split {args.split!r} has no samples")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    model = CrowdCounter(cfg)
    aug = AugmentConfig() if cfg.augment else None
    ckpt = out / CHECKPOINT_NAME
    with open(out / LOG_NAME, "w", encoding="utf-8") as log:
        def on_step(entry):
            line = entry.line()
            log.write(line + "\n")
            if args.verbose or entry.step % args.log_every == 0:
                print(line, flush=True)

        try:
            train(model, samples, steps=args.steps, augment_cfg=aug, on_step=on_step)
        except NumericError as exc:
            # the failing step raised before its update, so the weights are the last good ones
            save_checkpoint(model, ckpt)
            log.write(f"aborted reason={exc}\n")
            raise
    save_checkpoint(model, ckpt)
    print(f"checkpoint={ckpt}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = ModelConfig.load(args.config) if args.config else None
    model = load_checkpoint(args.checkpoint, cfg)
    samples = load_dataset(args.data, args.split)
    if not samples:
        raise ParameterError(f"{args.data}: split {args.split!r} has no samples")
    report = evaluate(model, samples, sigmas=args.sigma, threshold=args.threshold, workers=env_threads())
    _emit(report.to_text(), args.out)
    return 0


def overlay(image: np.ndarray, points: PointSet, radius: int = 2) -> np.ndarray:
    """Copy of ``image`` with a red cross on every point."""
    canvas = image.copy()
    _, H, W = canvas.shape
    for x, y in np.rint(points.points).astype(int):
        for d in range(-radius, radius + 1):
            for yy, xx in ((y + d, x), (y, x + d)):
                if 0 <= yy < H and 0 <= xx < W:
                    canvas[:, yy, xx] = (1.0, 0.0, 0.0)
    return canvas


def cmd_predict(args) -> int:
    cfg = ModelConfig.load(args.config) if args.config else None
    model = load_checkpoint(args.checkpoint, cfg)
    image = read_pnm(args.image)
    points = model.predict(image, args.threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    (out / f"{stem}.txt").write_text(points.to_text(), encoding="utf-8")
    write_pnm(out / f"{stem}_overlay.ppm", overlay(image, points))
    print(f"count={len(points)}")
    return 0


def cmd_synth_gen(args) -> int:
    H, W = (args.size * 2)[:2] if len(args.size) == 1 else args.size[:2]
    seed = 0 if args.seed is None else args.seed
    lo, hi = (args.count * 2)[:2] if len(args.count) == 1 else args.count[:2]
    out = Path(args.out)
    if args.train:
        save_dataset(synth_generate((lo, hi), H, W, seed, args.train, prefix="train"), out, "train")
    if args.test:
        save_dataset(synth_generate((lo, hi), H, W, seed, args.test, prefix="test"), out, "test")
    print(f"train={args.train} test={args.test} size={H}x{W} root={out}")
    return 0


def scaling_rows(sizes: Sequence[int], cfg: ModelConfig, repeat: int = 1):
    """``(size, pixels, scan_flops, seconds)`` per size using an untrained backbone."""
    model = CrowdCounter(cfg)
    rows = []
    for size in sizes:
        if size % 16:
            raise ParameterError(f"size {size} is not divisible by 16")
        image = Tensor(np.zeros((3, size, size)))
        best = float("inf")
        for _ in range(repeat):
            with no_grad(), count_flops() as fc:
                t0 = time.perf_counter()
                model.backbone(image)
                best = min(best, time.perf_counter() - t0)
        rows.append((size, size * size, fc.flops, best))
    return rows


def format_scaling(rows) -> str:
    header = ("size", "pixels", "scan_flops", "seconds", "pixel_ratio", "flop_ratio")
    table = [header]
    for i, (size, pixels, flops, secs) in enumerate(rows):
        pr = fr = ""
        if i:
            pr = f"{pixels / rows[i - 1][1]:.3f}"
            fr = f"{flops / rows[i - 1][2]:.3f}"
        table.append((str(size), str(pixels), str(flops), f"{secs:.4f}", pr, fr))
    widths = [max(len(r[c]) for r in table) for c in range(len(header))]
    return "".join("  ".join(cell.rjust(w) for cell, w in zip(r, widths)) + "\n" for r in table)


def cmd_bench_scaling(args) -> int:
    cfg = _load_config(args.config, args.seed)
    _emit(format_scaling(scaling_rows(args.sizes, cfg, args.repeat)), args.out)
    return 0


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")

    p = argparse.ArgumentParser(prog="vsscrowd", description="Point-based crowd counting on a VSS backbone.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train on a dataset split")
    t.add_argument("--config", help="key=value config file (defaults when omitted)")
    t.add_argument("--data", required=True, help="dataset root with manifest.txt")
    t.add_argument("--out", required=True, help="output directory for checkpoint and log")
    t.add_argument("--split", default="train")
    t.add_argument("--steps", type=int, default=None, help="overrides config steps")
    t.add_argument("--log-every", type=int, default=50)
    t.add_argument("--verbose", action="store_true", help="print every step")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", parents=[common], help="count and localisation metrics")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", help="require the checkpoint to match this config")
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--sigma", type=_float_list, default=[4.0, 8.0], help="comma-separated, e.g. 4,8")
    e.add_argument("--threshold", type=float, default=None)
    e.add_argument("--out", help="also write the report here")
    e.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("predict", parents=[common], help="points and overlay for one image")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--config")
    pr.add_argument("--image", required=True, help="8-bit binary PPM/PGM")
    pr.add_argument("--out", required=True, help="output directory")
    pr.add_argument("--threshold", type=float, default=None)
    pr.set_defaults(func=cmd_predict)

    s = sub.add_parser("synth-gen", parents=[common], help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--train", type=int, default=5, help="number of training scenes")
    s.add_argument("--test", type=int, default=0, help="number of test scenes")
    s.add_argument("--count", type=_int_list, default=[5, 15], help="min,max people per scene")
    s.add_argument("--size", type=_int_list, default=[64], help="H[,W], multiples of 16")
    s.set_defaults(func=cmd_synth_gen)

    b = sub.add_parser("bench-scaling", parents=[common], help="scan flops and time versus image size")
    b.add_argument("--sizes", type=_int_list, default=[64, 128, 256])
    b.add_argument("--config")
    b.add_argument("--repeat", type=int, default=1)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench_scaling)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VsscrowdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
