"""Independent reference implementations used as test oracles.

These deliberately stay naive (scalar loops, direct definitions) so they
share no code with the implementations they check.
"""

import math

import numpy as np


def conv2d_loops(x, weights, bias):
    """Direct 6-nested-loop convolution with zero same-padding, float64 accumulation."""
    n, c_in, h, w = x.shape
    c_out, _, k_h, k_w = weights.shape
    p_h, p_w = k_h // 2, k_w // 2
    out = np.zeros((n, c_out, h, w), dtype=np.float64)
    for ni in range(n):
        for o in range(c_out):
            for y in range(h):
                for xx in range(w):
                    acc = float(bias[o])
                    for i in range(c_in):
                        for dy in range(k_h):
                            for dx in range(k_w):
                                yy = y + dy - p_h
                                xs = xx + dx - p_w
                                if 0 <= yy < h and 0 <= xs < w:
                                    acc += float(weights[o, i, dy, dx]) * float(x[ni, i, yy, xs])
                    out[ni, o, y, xx] = acc
    return out


def mse_loop(pred, target):
    """Scalar double-precision mean squared error."""
    p = np.asarray(pred).reshape(-1)
    t = np.asarray(target).reshape(-1)
    total = 0.0
    for a, b in zip(p, t):
        d = float(a) - float(b)
        total += d * d
    return total / p.size


def psnr_scalar(pred, target):
    value = mse_loop(pred, target)
    if value < 1e-10:
        return 99.0
    return 10.0 * math.log10(1.0 / value)


def elementwise_loop(a, b, op):
    """Flat scalar loop applying a binary op, for checking vectorized map2."""
    af = np.asarray(a).reshape(-1)
    bf = np.asarray(b).reshape(-1)
    return np.array([op(float(x), float(y)) for x, y in zip(af, bf)]).reshape(np.asarray(a).shape)
