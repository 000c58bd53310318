"""Training losses with analytic gradients, plus evaluation metrics.

The primary loss is the per-element mean squared error between predicted
and true pixels. The optional feature-space variant measures the same
squared error between encoder activations of prediction and target instead
of raw pixels, backpropagating through a fixed encoder network.

Values accumulate in float64 regardless of input dtype; reported pixel
errors can be rescaled to 0-255 units, where the literature's usual
quality thresholds live.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .layers import (
    CONV,
    DROPOUT,
    EVAL,
    LEAKY_RELU,
    ConvLayer,
    ForwardTrace,
    NetworkSpec,
    conv2d_forward,
    dropout_forward,
    leaky_relu_forward,
    network_backward,
)

PAPER_SCALE = 255.0 * 255.0  # [0,1] MSE -> 0-255-unit MSE
PSNR_CAP_DB = 99.0
_PSNR_MSE_FLOOR = 1e-10


@dataclass
class LossValue:
    """Scalar loss (mean over elements) and its gradient w.r.t. the prediction."""

    value: float
    grad: np.ndarray


def _as_pair(pred, target) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred)
    t = np.asarray(target)
    if p.shape != t.shape:
        raise ShapeError(f"prediction shape {p.shape} != target shape {t.shape}")
    return p, t


def mse_pixel(pred, target) -> LossValue:
    """Mean squared error over every element; grad_i = (2/n)(pred_i - target_i)."""
    p, t = _as_pair(pred, target)
    diff = p.astype(np.float64) - t.astype(np.float64)
    n = diff.size
    value = float(np.sum(diff * diff) / n)
    grad = ((2.0 / n) * diff).astype(p.dtype)
    return LossValue(value, grad)


def paper_scale_mse(pred, target) -> float:
    """Pixel MSE expressed in 0-255 units (internal [0,1] MSE x 255^2)."""
    return mse_pixel(pred, target).value * PAPER_SCALE


def psnr(pred, target) -> float:
    """Peak signal-to-noise ratio in dB for [0,1] inputs, capped at 99 dB."""
    value = mse_pixel(pred, target).value
    if value < _PSNR_MSE_FLOOR:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / value))


def psnr_from_mse(value: float) -> float:
    if value < _PSNR_MSE_FLOOR:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / value))


def encoder_taps(net: NetworkSpec) -> list[int]:
    """Layer indices whose outputs form the encoder's activation set.

    Each conv block contributes its final (post-activation) output: a layer
    is a tap if it is the last layer overall or the next layer starts a new
    conv block. An empty network has no taps; the loss then degenerates to
    the raw pixel error.
    """
    taps = []
    for i in range(len(net.layers)):
        if i + 1 == len(net.layers) or net.layers[i + 1].kind == CONV:
            taps.append(i)
    return taps


def _forward_all_outputs(
    net: NetworkSpec, params: list[ConvLayer], x: np.ndarray
) -> tuple[list[np.ndarray], ForwardTrace]:
    """Eval-mode forward keeping every layer's output (plus the usual trace)."""
    outputs: list[np.ndarray] = []
    out = x
    conv_idx = 0
    trace = ForwardTrace(mode=EVAL)
    for spec in net.layers:
        if spec.kind == CONV:
            trace.entries.append((CONV, out))
            out = conv2d_forward(out, params[conv_idx])
            conv_idx += 1
        elif spec.kind == LEAKY_RELU:
            trace.entries.append((LEAKY_RELU, out))
            out = leaky_relu_forward(out, spec.slope)
        else:
            out, mask = dropout_forward(out, spec.drop_prob, EVAL)
            trace.entries.append((DROPOUT, mask))
        outputs.append(out)
    return outputs, trace


def mse_encoding(pred, target, encoder: NetworkSpec, encoder_params: list[ConvLayer]) -> LossValue:
    """Mean squared error between encoder activations of prediction and target.

    Averages over all activation elements across the encoder's blocks with
    uniform weight. The gradient is backpropagated through the (frozen)
    encoder to the prediction; encoder parameters receive no gradient. With
    an empty encoder this is exactly ``mse_pixel``.
    """
    p, t = _as_pair(pred, target)
    if p.ndim != 4 or p.shape[1] != encoder.input_channels:
        raise ShapeError(
            f"encoder expects (n, {encoder.input_channels}, h, w) input, got {p.shape}"
        )
    if not encoder.layers:
        return mse_pixel(p, t)

    taps = encoder_taps(encoder)
    outs_p, trace_p = _forward_all_outputs(encoder, encoder_params, p)
    outs_t, _ = _forward_all_outputs(encoder, encoder_params, t)

    total = sum(outs_p[i].size for i in taps)
    sse = 0.0
    inject: dict[int, np.ndarray] = {}
    for i in taps:
        diff = outs_p[i].astype(np.float64) - outs_t[i].astype(np.float64)
        sse += float(np.sum(diff * diff))
        inject[i] = ((2.0 / total) * diff).astype(p.dtype)

    value = sse / total
    zero_tail = np.zeros_like(outs_p[-1])
    _, grad = network_backward(encoder, encoder_params, trace_p, zero_tail, inject=inject)
    return LossValue(value, grad)
