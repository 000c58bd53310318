"""Training loop, evaluation, and inference binding the modules together.

A run is fully determined by (config, dataset, seed): shuffling, weight
init, and dropout masks all come from one counter-based random stream whose
counter is persisted in checkpoints, so an interrupted run resumed from a
checkpoint is bit-identical to an uninterrupted one.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import DatasetError, NumericError, ParameterError, ShapeError, StateError
from .frames import Dataset, Frame, FrameTriplet, write_frame
from .layers import (
    EVAL,
    TRAIN,
    ConvLayer,
    NetworkSpec,
    build_interpolator,
    conv_spec,
    init_params,
    leaky_relu_spec,
    manifest_text,
    network_backward,
    network_forward,
)
from .losses import mse_encoding, mse_pixel, psnr_from_mse, PAPER_SCALE
from .optim import clip_gradients, make_optim_state, optim_step
from .tensor import Rng, Tensor

CURVE_HEADER = "epoch,split,mse_internal,mse_paper,psnr_db,seconds"

_ENCODER_STREAM = 1  # rng stream reserved for the feature-loss encoder


@dataclass
class TrainConfig:
    """Every knob the training protocol leaves open, with sane defaults."""

    epochs: int = 200
    batch_size: int = 4
    lr: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    drop_prob: float = 0.1
    leaky_slope: float = 0.1
    embed_dim: int = 32
    loss: str = "pixel"
    seed: int = 42
    val_fraction: float = 0.1
    log_every: int = 10
    checkpoint_every: int = 50
    grad_clip: float = 0.0
    log_timing: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ParameterError(f"lr must be > 0, got {self.lr}")
        if self.optimizer not in ("adam", "sgd"):
            raise ParameterError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ParameterError(f"drop_prob must be in [0, 1), got {self.drop_prob}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ParameterError(f"leaky_slope must be in (0, 1), got {self.leaky_slope}")
        if self.embed_dim < 3:
            raise ParameterError(f"embed_dim must be >= 3, got {self.embed_dim}")
        if self.loss not in ("pixel", "encoding"):
            raise ParameterError(f"loss must be 'pixel' or 'encoding', got {self.loss!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ParameterError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.log_every < 1:
            raise ParameterError(f"log_every must be >= 1, got {self.log_every}")
        if self.checkpoint_every < 0:
            raise ParameterError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if self.grad_clip < 0:
            raise ParameterError(f"grad_clip must be >= 0 (0 disables), got {self.grad_clip}")

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {value!r}" if isinstance(value, str) else f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"config line {lineno}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in known:
                raise ParameterError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _parse_value(val)
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())


def _parse_value(val: str):
    if len(val) >= 2 and val[0] == val[-1] and val[0] in "'\"":
        return val[1:-1]
    low = val.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(val)
    except ValueError:
        pass
    try:
        return float(val)
    except ValueError:
        pass
    return val


@dataclass
class CurveRow:
    epoch: int
    split: str
    mse_internal: float
    mse_paper: float
    psnr_db: float
    seconds: float

    def as_csv(self) -> str:
        return (
            f"{self.epoch},{self.split},{self.mse_internal:.10e},"
            f"{self.mse_paper:.6f},{self.psnr_db:.4f},{self.seconds:.3f}"
        )


def write_curve_csv(rows: list[CurveRow], path) -> None:
    lines = [CURVE_HEADER] + [row.as_csv() for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def make_model_input(triplet: FrameTriplet) -> Tensor:
    """(1, 6, h, w) network input: frame_a in channels 0-2, frame_b in channels 3-5."""
    stacked = np.concatenate([triplet.frame_a.pixels.data, triplet.frame_b.pixels.data], axis=1)
    return Tensor._wrap(np.ascontiguousarray(stacked))


def _input_array(triplet: FrameTriplet) -> np.ndarray:
    return np.concatenate([triplet.frame_a.pixels.data, triplet.frame_b.pixels.data], axis=1)


def _flatten_params(params: list[ConvLayer]) -> list[np.ndarray]:
    flat: list[np.ndarray] = []
    for layer in params:
        flat.extend([layer.weights, layer.bias])
    return flat


def _rebuild_params(flat: list[np.ndarray]) -> list[ConvLayer]:
    return [ConvLayer(flat[2 * i], flat[2 * i + 1]) for i in range(len(flat) // 2)]


def _flatten_grads(grads: list[tuple[np.ndarray, np.ndarray]]) -> list[np.ndarray]:
    flat: list[np.ndarray] = []
    for g_w, g_b in grads:
        flat.extend([g_w, g_b])
    return flat


def _split_dataset(dataset: Dataset, val_fraction: float) -> tuple[list[FrameTriplet], list[FrameTriplet]]:
    """Deterministic split: the last ceil(val_fraction * N) triplets validate.

    The training side is never allowed to go empty, so a one-triplet dataset
    trains on that triplet and skips validation.
    """
    n = len(dataset)
    val_count = min(math.ceil(val_fraction * n), n - 1)
    cut = n - val_count
    return dataset.triplets[:cut], dataset.triplets[cut:]


def _feature_encoder(seed: int) -> tuple[NetworkSpec, list[ConvLayer]]:
    """Small fixed random encoder for the feature-space loss (frozen, 3->3 channels)."""
    spec = NetworkSpec((conv_spec(3, 3, 3), leaky_relu_spec(0.1)), input_channels=3)
    params = init_params(spec, Rng(seed, stream=_ENCODER_STREAM))
    return spec, params


def _batched_pixel_mse(net, params, inputs, targets, batch_size: int) -> float:
    """Eval-mode mean pixel MSE over a list of (1,...) arrays, element-weighted."""
    sse = 0.0
    count = 0
    for start in range(0, len(inputs), batch_size):
        x = np.concatenate(inputs[start : start + batch_size])
        y = np.concatenate(targets[start : start + batch_size])
        out, _ = network_forward(net, params, x, EVAL)
        sse += mse_pixel(out, y).value * out.size
        count += out.size
    return sse / count


def train(
    config: TrainConfig,
    dataset: Dataset,
    out_dir,
    resume_from=None,
) -> tuple[list[CurveRow], Checkpoint]:
    """Run the full training protocol; returns the learning curve and final checkpoint.

    Writes curve.csv, curve.png, periodic checkpoints, and checkpoint_final.fwck
    into ``out_dir``. Aborts with a diagnostic on non-finite losses.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_triplets, val_triplets = _split_dataset(dataset, config.val_fraction)
    if not train_triplets:
        raise DatasetError("dataset leaves no training triplets after the validation split")

    net = build_interpolator(6, config.embed_dim, config.leaky_slope, config.drop_prob)
    rng = Rng(config.seed)
    params = init_params(net, rng)
    optim = make_optim_state(
        config.optimizer, _flatten_params(params), config.lr, momentum=config.momentum
    )

    start_epoch = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if manifest_text(ckpt.net) != manifest_text(net):
            raise StateError("checkpoint network manifest does not match the configured network")
        params = ckpt.params
        optim = ckpt.optim
        start_epoch = ckpt.epoch
        rng.counter = ckpt.rng_counter
        if start_epoch >= config.epochs:
            raise ParameterError(
                f"checkpoint is already at epoch {start_epoch} of {config.epochs}"
            )

    if config.loss == "encoding":
        encoder, encoder_params = _feature_encoder(config.seed)
    else:
        encoder, encoder_params = None, None

    train_inputs = [_input_array(t) for t in train_triplets]
    train_targets = [t.frame_mid.pixels.data for t in train_triplets]
    val_inputs = [_input_array(t) for t in val_triplets]
    val_targets = [t.frame_mid.pixels.data for t in val_triplets]

    rows: list[CurveRow] = []
    for epoch in range(start_epoch + 1, config.epochs + 1):
        t_start = time.perf_counter()
        order = rng.permutation(len(train_triplets))
        sse = 0.0
        count = 0
        for batch_no, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start : start + config.batch_size]
            x = np.concatenate([train_inputs[i] for i in idx])
            y = np.concatenate([train_targets[i] for i in idx])
            out, trace = network_forward(net, params, x, TRAIN, rng)
            if config.loss == "encoding":
                loss = mse_encoding(out, y, encoder, encoder_params)
                pixel_value = mse_pixel(out, y).value
            else:
                loss = mse_pixel(out, y)
                pixel_value = loss.value
            if not np.isfinite(loss.value):
                raise NumericError(f"non-finite loss at epoch {epoch} batch {batch_no}")
            grads, _ = network_backward(net, params, trace, loss.grad)
            flat_grads = _flatten_grads(grads)
            if config.grad_clip > 0:
                flat_grads = clip_gradients(flat_grads, config.grad_clip)
            params = _rebuild_params(optim_step(_flatten_params(params), flat_grads, optim))
            sse += pixel_value * out.size
            count += out.size

        train_mse = sse / count
        elapsed = time.perf_counter() - t_start
        seconds = elapsed if config.log_timing else 0.0
        rows.append(
            CurveRow(epoch, "train", train_mse, train_mse * PAPER_SCALE, psnr_from_mse(train_mse), seconds)
        )
        if val_inputs:
            val_mse = _batched_pixel_mse(net, params, val_inputs, val_targets, config.batch_size)
            rows.append(
                CurveRow(epoch, "val", val_mse, val_mse * PAPER_SCALE, psnr_from_mse(val_mse), seconds)
            )

        if epoch % config.log_every == 0 or epoch == config.epochs:
            val_note = f" val={rows[-1].mse_paper:.3f}" if val_inputs else ""
            print(
                f"epoch {epoch}/{config.epochs} train_mse255={train_mse * PAPER_SCALE:.3f}"
                f"{val_note} ({elapsed:.2f}s)"
            )

        if config.checkpoint_every and epoch % config.checkpoint_every == 0 and epoch < config.epochs:
            snapshot = Checkpoint(net, params, optim, epoch, rng.counter, config.to_text())
            save_checkpoint(out_dir / f"ckpt_epoch_{epoch:04d}.fwck", snapshot)

    final = Checkpoint(net, params, optim, config.epochs, rng.counter, config.to_text())
    save_checkpoint(out_dir / "checkpoint_final.fwck", final)
    write_curve_csv(rows, out_dir / "curve.csv")
    from .plots import save_curve_figure

    save_curve_figure(rows, out_dir / "curve.png")
    return rows, final


def _require_interpolator(net: NetworkSpec) -> None:
    if net.input_channels != 6 or net.output_channels != 3:
        raise StateError(
            f"checkpoint network maps {net.input_channels}->{net.output_channels} channels; "
            "an interpolator must map 6->3"
        )


def interpolate(ckpt: Checkpoint, frame_a: Frame, frame_b: Frame) -> Frame:
    """Eval-mode prediction of the frame between two inputs, clamped to [0, 1]."""
    _require_interpolator(ckpt.net)
    if (frame_a.height, frame_a.width) != (frame_b.height, frame_b.width):
        raise ShapeError(
            f"input frames disagree on dimensions: "
            f"{(frame_a.height, frame_a.width)} vs {(frame_b.height, frame_b.width)}"
        )
    x = np.concatenate([frame_a.pixels.data, frame_b.pixels.data], axis=1)
    out, _ = network_forward(ckpt.net, ckpt.params, x, EVAL)
    pixels = np.clip(out, 0.0, 1.0).astype(np.float32)
    return Frame(Tensor._wrap(np.ascontiguousarray(pixels)), frame_a.source_index + 1)


def _side_by_side(pred: Frame, truth: Frame, separator: bool) -> Frame:
    parts = [pred.pixels.data]
    if separator:
        h = pred.height
        parts.append(np.full((1, 3, h, 1), 0.5, dtype=np.float32))
    parts.append(truth.pixels.data)
    strip = np.concatenate(parts, axis=3)
    return Frame(Tensor._wrap(np.ascontiguousarray(strip)), truth.source_index)


def evaluate(
    ckpt: Checkpoint,
    dataset: Dataset,
    out_dir,
    num_images: int = 4,
    separator: bool = False,
) -> dict:
    """Per-triplet and aggregate metrics plus side-by-side comparison images.

    Writes eval.csv (one row per triplet plus an aggregate row), an
    eval_mse.png figure, and compare_NNNN.png images (predicted | ground
    truth) for the first ``num_images`` triplets.
    """
    _require_interpolator(ckpt.net)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    per_mse: list[float] = []
    lines = ["triplet,mse_internal,mse_paper,psnr_db"]
    for i, triplet in enumerate(dataset.triplets):
        pred = interpolate(ckpt, triplet.frame_a, triplet.frame_b)
        value = mse_pixel(pred.pixels, triplet.frame_mid.pixels).value
        per_mse.append(value)
        lines.append(
            f"{i},{value:.10e},{value * PAPER_SCALE:.6f},{psnr_from_mse(value):.4f}"
        )
        if i < num_images:
            write_frame(_side_by_side(pred, triplet.frame_mid, separator), out_dir / f"compare_{i:04d}.png")

    aggregate = float(np.mean(per_mse))
    lines.append(
        f"aggregate,{aggregate:.10e},{aggregate * PAPER_SCALE:.6f},{psnr_from_mse(aggregate):.4f}"
    )
    (out_dir / "eval.csv").write_text("\n".join(lines) + "\n")

    from .plots import save_eval_figure

    save_eval_figure([m * PAPER_SCALE for m in per_mse], aggregate * PAPER_SCALE, out_dir / "eval_mse.png")

    return {
        "per_triplet_mse": per_mse,
        "aggregate_mse": aggregate,
        "aggregate_mse_paper": aggregate * PAPER_SCALE,
        "aggregate_psnr_db": psnr_from_mse(aggregate),
    }
