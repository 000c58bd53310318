"""Finite-difference verification of every analytic gradient.

All checks run in float64 with central differences. Scalar objectives are
built by projecting layer outputs onto a fixed random direction, which is
a stricter probe than summing. The public entry point runs one suite per
layer kind plus both losses and the full network, and reports the worst
per-component relative error for each.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .layers import (
    ConvLayer,
    build_interpolator,
    conv2d_backward,
    conv2d_forward,
    dropout_backward,
    init_params,
    leaky_relu_backward,
    leaky_relu_forward,
    network_backward,
    network_forward,
)
from .losses import mse_encoding, mse_pixel
from .tensor import Rng

DEFAULT_STEP = 1e-4
LAYER_TOL = 1e-5
NETWORK_TOL = 1e-4


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = DEFAULT_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar function, one component at a time."""
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * step)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Worst per-component relative error, with tiny pairs compared absolutely."""
    a = analytic.astype(np.float64).reshape(-1)
    b = numeric.astype(np.float64).reshape(-1)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale))


def compare_gradients(
    f: Callable[..., float],
    inputs: Sequence[np.ndarray],
    analytic: Sequence[np.ndarray],
    step: float = DEFAULT_STEP,
) -> float:
    """Worst relative error of analytic gradients vs. central differences.

    ``f`` takes the full input list; gradients are checked one input at a
    time with the others held fixed.
    """
    worst = 0.0
    inputs = [x.astype(np.float64) for x in inputs]
    for k in range(len(inputs)):
        def partial(x, _k=k):
            probe = list(inputs)
            probe[_k] = x
            return f(*probe)

        numeric = numerical_gradient(partial, inputs[k], step)
        worst = max(worst, max_rel_error(np.asarray(analytic[k]), numeric))
    return worst


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _random_conv_case(rng: Rng, kernel: int) -> tuple[np.ndarray, ConvLayer, np.ndarray]:
    c_in = 1 + int(rng.uniform_array(())[()] * 4)  # 1..4
    c_out = 1 + int(rng.uniform_array(())[()] * 4)
    h = kernel + int(rng.uniform_array(())[()] * (9 - kernel))  # kernel..8
    w = kernel + int(rng.uniform_array(())[()] * (9 - kernel))
    x = rng.normal_array((1, c_in, h, w))
    weights = rng.normal_array((c_out, c_in, kernel, kernel), 0.0, 0.5)
    bias = rng.normal_array((c_out,), 0.0, 0.5)
    projection = rng.normal_array((1, c_out, h, w))
    return x, ConvLayer(weights, bias), projection


def check_conv(rng: Rng, kernel: int) -> float:
    x, layer, projection = _random_conv_case(rng, kernel)

    def objective(xv, wv, bv):
        out = conv2d_forward(xv, ConvLayer(wv, bv))
        return float(np.sum(out * projection))

    g_x, g_w, g_b = conv2d_backward(x, layer, projection)
    return compare_gradients(objective, [x, layer.weights, layer.bias], [g_x, g_w, g_b])


def check_leaky_relu(rng: Rng, slope: float = 0.1) -> float:
    x = rng.normal_array((2, 3, 6, 6))
    # Nudge values away from the kink, where finite differences are undefined.
    x = np.where(np.abs(x) < 1e-2, x + np.sign(x + 1e-12) * 2e-2, x)
    projection = rng.normal_array(x.shape)

    def objective(xv):
        return float(np.sum(leaky_relu_forward(xv, slope) * projection))

    analytic = leaky_relu_backward(x, slope, projection)
    return compare_gradients(objective, [x], [analytic])


def check_dropout_fixed_mask(rng: Rng, drop_prob: float = 0.3) -> float:
    x = rng.normal_array((1, 4, 6, 6))
    keep = rng.uniform_array(x.shape) >= drop_prob
    mask = keep.astype(np.float64) / (1.0 - drop_prob)
    projection = rng.normal_array(x.shape)

    def objective(xv):
        return float(np.sum(xv * mask * projection))

    analytic = dropout_backward(mask, projection)
    return compare_gradients(objective, [x], [analytic])


def check_mse_pixel(rng: Rng) -> float:
    pred = rng.normal_array((1, 3, 5, 5))
    target = rng.normal_array(pred.shape)

    def objective(pv):
        return mse_pixel(pv, target).value

    analytic = mse_pixel(pred, target).grad
    return compare_gradients(objective, [pred], [analytic])


def _kink_margin(net, trace) -> float:
    """Smallest |pre-activation| feeding any LeakyReLU in a forward trace.

    Finite differences are only trustworthy when no perturbation can push a
    pre-activation across the kink at zero, so checks resample instances
    until this margin comfortably exceeds the reachable band.
    """
    margins = [
        float(np.min(np.abs(cached)))
        for (kind, cached), spec in zip(trace.entries, net.layers)
        if kind == "leaky_relu"
    ]
    return min(margins) if margins else np.inf


def check_mse_encoding(rng: Rng) -> float:
    from .layers import NetworkSpec, conv_spec, leaky_relu_spec

    encoder = NetworkSpec((conv_spec(3, 3, 3), leaky_relu_spec(0.1)), input_channels=3)
    enc_params = init_params(encoder, rng, dtype=np.float64)
    for _ in range(20):  # resample away from LeakyReLU kinks
        pred = rng.normal_array((1, 3, 6, 6))
        target = rng.normal_array(pred.shape)
        _, trace = network_forward(encoder, enc_params, pred, mode="eval")
        if _kink_margin(encoder, trace) >= 1e-3:
            break

    def objective(pv):
        return mse_encoding(pv, target, encoder, enc_params).value

    analytic = mse_encoding(pred, target, encoder, enc_params).grad
    return compare_gradients(objective, [pred], [analytic], step=1e-5)


def check_full_network(rng: Rng, embed_dim: int = 4, resolution: int = 8) -> float:
    """End-to-end check of the 7-layer network, dropout disabled, at small scale.

    Uses a smaller step than the per-layer checks and resamples until every
    hidden pre-activation clears the kink by more than the perturbation can
    move it; otherwise single near-zero units poison the comparison.
    """
    net = build_interpolator(6, embed_dim=embed_dim, slope=0.1, drop_prob=0.0)
    # step balances FD roundoff (~3e-11/step) against the kink band
    # (~50*step); the margin keeps the band clear of every pre-activation.
    step = 3e-6
    best = None
    for _ in range(30):
        params = init_params(net, rng, dtype=np.float64)
        x = rng.normal_array((1, 6, resolution, resolution), 0.0, 0.5)
        target = rng.normal_array((1, 3, resolution, resolution), 0.0, 0.5)
        out, trace = network_forward(net, params, x, mode="eval")
        margin = _kink_margin(net, trace)
        if best is None or margin > best[0]:
            best = (margin, params, x, target, out, trace)
        if margin >= 5e-4:
            break
    _, params, x, target, out, trace = best

    arrays: list[np.ndarray] = []
    for layer in params:
        arrays.extend([layer.weights, layer.bias])

    def objective(*flat):
        rebuilt = [ConvLayer(flat[2 * i], flat[2 * i + 1]) for i in range(len(params))]
        out, _ = network_forward(net, rebuilt, x, mode="eval")
        return mse_pixel(out, target).value

    loss = mse_pixel(out, target)
    grads, _ = network_backward(net, params, trace, loss.grad)
    analytic: list[np.ndarray] = []
    for g_w, g_b in grads:
        analytic.extend([g_w, g_b])
    return compare_gradients(objective, arrays, analytic, step=step)


def run_all(seed: int = 0) -> list[CheckResult]:
    """Run every gradient suite; one result per layer kind plus losses and the full net."""
    rng = Rng(seed)
    results = [
        CheckResult("conv1x1", check_conv(rng, 1), LAYER_TOL),
        CheckResult("conv3x3", check_conv(rng, 3), LAYER_TOL),
        CheckResult("conv5x5", check_conv(rng, 5), LAYER_TOL),
        CheckResult("conv7x7", check_conv(rng, 7), LAYER_TOL),
        CheckResult("leaky_relu", check_leaky_relu(rng), LAYER_TOL),
        CheckResult("dropout_fixed_mask", check_dropout_fixed_mask(rng), LAYER_TOL),
        CheckResult("mse_pixel", check_mse_pixel(rng), LAYER_TOL),
        CheckResult("mse_encoding", check_mse_encoding(rng), LAYER_TOL),
        CheckResult("network_7layer", check_full_network(rng), NETWORK_TOL),
    ]
    return results
