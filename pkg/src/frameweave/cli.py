"""Command-line interface: train, interpolate, eval, synth, gradcheck."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .errors import FrameweaveError
from .frames import load_dataset, read_frame, save_dataset, synth_motion_dataset, write_frame
from .gradcheck import run_all
from .tensor import Rng
from .train import TrainConfig, evaluate, interpolate, train


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 64x64, got {text!r}") from None


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="frameweave", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train an interpolator on a frame dataset")
    p_train.add_argument("--config", type=Path, help="key = value config file")
    p_train.add_argument("--data", type=Path, required=True, help="frame directory or .fwds file")
    p_train.add_argument("--out", type=Path, required=True, help="output directory")
    p_train.add_argument("--stride", type=int, default=1, help="triplet window stride for frame dirs (use 3 for synth output)")
    p_train.add_argument("--resume", type=Path, help="checkpoint to resume from")
    p_train.add_argument("--timing", action="store_true", help="record wall-clock seconds in curve.csv (breaks byte-determinism)")
    for name, cast in [
        ("epochs", int), ("batch-size", int), ("lr", float), ("seed", int),
        ("optimizer", str), ("loss", str), ("drop-prob", float), ("embed-dim", int),
        ("val-fraction", float), ("leaky-slope", float), ("grad-clip", float),
        ("log-every", int), ("checkpoint-every", int),
    ]:
        p_train.add_argument(f"--{name}", type=cast, default=None)

    p_interp = sub.add_parser("interpolate", help="predict the frame between two images")
    p_interp.add_argument("--ckpt", type=Path, required=True)
    p_interp.add_argument("--a", type=Path, required=True, help="first input frame")
    p_interp.add_argument("--b", type=Path, required=True, help="second input frame")
    p_interp.add_argument("--out", type=Path, required=True, help="output image (.ppm or .png)")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("--ckpt", type=Path, required=True)
    p_eval.add_argument("--data", type=Path, required=True)
    p_eval.add_argument("--out", type=Path, required=True)
    p_eval.add_argument("--stride", type=int, default=1)
    p_eval.add_argument("--images", type=int, default=4, help="number of comparison images to export")
    p_eval.add_argument("--separator", action="store_true", help="insert a separator column in comparisons")

    p_synth = sub.add_parser("synth", help="generate a synthetic moving-shape dataset")
    p_synth.add_argument("--count", type=int, required=True, help="number of triplets")
    p_synth.add_argument("--size", type=_parse_size, required=True, help="frame size HxW, e.g. 64x64")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", type=Path, required=True, help="output directory")
    p_synth.add_argument("--pack", action="store_true", help="also write a packed dataset.fwds")

    p_grad = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p_grad.add_argument("--seed", type=int, default=0)

    return parser


def _train_config(args) -> TrainConfig:
    config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    overrides = {}
    for name in [
        "epochs", "batch_size", "lr", "seed", "optimizer", "loss", "drop_prob",
        "embed_dim", "val_fraction", "leaky_slope", "grad_clip", "log_every",
        "checkpoint_every",
    ]:
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.timing:
        overrides["log_timing"] = True
    if overrides:
        from dataclasses import replace

        config = replace(config, **overrides)
    return config


def _cmd_train(args) -> int:
    config = _train_config(args)
    dataset = load_dataset(args.data, stride=args.stride)
    rows, _ = train(config, dataset, args.out, resume_from=args.resume)
    final_train = [r for r in rows if r.split == "train"][-1]
    print(f"done: final train MSE {final_train.mse_paper:.3f} (0-255 scale); outputs in {args.out}")
    return 0


def _cmd_interpolate(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    frame_a = read_frame(args.a, source_index=0)
    frame_b = read_frame(args.b, source_index=2)
    predicted = interpolate(ckpt, frame_a, frame_b)
    write_frame(predicted, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data, stride=args.stride)
    summary = evaluate(ckpt, dataset, args.out, num_images=args.images, separator=args.separator)
    print(
        f"{len(dataset)} triplets: aggregate MSE {summary['aggregate_mse_paper']:.3f} "
        f"(0-255 scale), PSNR {summary['aggregate_psnr_db']:.2f} dB; outputs in {args.out}"
    )
    return 0


def _cmd_synth(args) -> int:
    dataset = synth_motion_dataset(args.count, args.size, Rng(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = 0
    for triplet in dataset.triplets:
        for frame in (triplet.frame_a, triplet.frame_mid, triplet.frame_b):
            write_frame(frame, out / f"frame_{index:06d}.ppm")
            index += 1
    if args.pack:
        save_dataset(out / "dataset.fwds", dataset)
    print(f"wrote {index} frames ({args.count} triplets) to {out}")
    print("note: reload the frame directory with --stride 3 to recover the generated triplets")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_all(seed=args.seed)
    failed = False
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{res.name:<20} max_rel_err={res.max_rel_error:.3e} tol={res.tolerance:.0e} {status}")
        failed = failed or not res.passed
    return 1 if failed else 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "interpolate": _cmd_interpolate,
        "eval": _cmd_eval,
        "synth": _cmd_synth,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except (FrameweaveError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
