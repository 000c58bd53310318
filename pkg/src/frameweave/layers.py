"""Convolution, activation, and dropout layers with analytic gradients.

Convolutions are stride-1 with zero same-padding (odd kernels only), so
spatial dimensions are preserved end to end. The forward pass lowers each
convolution to a single matrix multiply over sliding windows; the backward
pass reuses the same primitive, since the input gradient of a same-padded
stride-1 convolution is itself a same-padded convolution with the kernel
flipped and its channel axes swapped.

All kernels are dtype-polymorphic: the training pipeline runs float32 while
gradient checking drives the identical code in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError, ShapeError, StateError
from .tensor import Rng

CONV = "conv"
LEAKY_RELU = "leaky_relu"
DROPOUT = "dropout"

TRAIN = "train"
EVAL = "eval"


@dataclass
class ConvLayer:
    """Learnable 2-D convolution: weights (c_out, c_in, k_h, k_w) plus bias (c_out,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        if self.weights.ndim != 4:
            raise ShapeError(f"conv weights must be rank 4, got shape {self.weights.shape}")
        c_out, c_in, k_h, k_w = self.weights.shape
        if min(c_out, c_in) < 1:
            raise ShapeError(f"conv channel counts must be >= 1, got {self.weights.shape}")
        if k_h % 2 == 0 or k_w % 2 == 0 or min(k_h, k_w) < 1:
            raise ShapeError(f"kernel dims must be odd and positive, got ({k_h}, {k_w})")
        if self.bias.shape != (c_out,):
            raise ShapeError(f"bias shape {self.bias.shape} does not match c_out={c_out}")

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]


@dataclass(frozen=True)
class LayerSpec:
    """Description of one layer: a conv, a LeakyReLU, or a dropout."""

    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: tuple[int, int] = (0, 0)
    slope: float = 0.0
    drop_prob: float = 0.0

    def __post_init__(self) -> None:
        if self.kind == CONV:
            if min(self.in_channels, self.out_channels) < 1:
                raise ParameterError(f"conv channels must be >= 1, got {self.in_channels}->{self.out_channels}")
            k_h, k_w = self.kernel
            if min(k_h, k_w) < 1 or k_h % 2 == 0 or k_w % 2 == 0:
                raise ParameterError(f"conv kernel must be odd and positive, got {self.kernel}")
        elif self.kind == LEAKY_RELU:
            if not 0.0 < self.slope < 1.0:
                raise ParameterError(f"leaky slope must be in (0, 1), got {self.slope}")
        elif self.kind == DROPOUT:
            if not 0.0 <= self.drop_prob < 1.0:
                raise ParameterError(f"drop probability must be in [0, 1), got {self.drop_prob}")
        else:
            raise ParameterError(f"unknown layer kind {self.kind!r}")


def conv_spec(in_channels: int, out_channels: int, kernel: int | tuple[int, int]) -> LayerSpec:
    if isinstance(kernel, int):
        kernel = (kernel, kernel)
    return LayerSpec(CONV, in_channels=in_channels, out_channels=out_channels, kernel=kernel)


def leaky_relu_spec(slope: float) -> LayerSpec:
    return LayerSpec(LEAKY_RELU, slope=slope)


def dropout_spec(drop_prob: float) -> LayerSpec:
    return LayerSpec(DROPOUT, drop_prob=drop_prob)


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer descriptions with a fixed input channel count.

    Channel counts must chain consistently from layer to layer; activation
    and dropout layers are channel-preserving.
    """

    layers: tuple[LayerSpec, ...]
    input_channels: int

    def __post_init__(self) -> None:
        if self.input_channels < 1:
            raise ParameterError(f"input_channels must be >= 1, got {self.input_channels}")
        channels = self.input_channels
        for i, spec in enumerate(self.layers):
            if spec.kind == CONV:
                if spec.in_channels != channels:
                    raise ShapeError(
                        f"layer {i}: conv expects {spec.in_channels} channels but receives {channels}"
                    )
                channels = spec.out_channels

    @property
    def output_channels(self) -> int:
        channels = self.input_channels
        for spec in self.layers:
            if spec.kind == CONV:
                channels = spec.out_channels
        return channels

    def conv_layers(self) -> list[LayerSpec]:
        return [spec for spec in self.layers if spec.kind == CONV]


@dataclass
class ForwardTrace:
    """Per-layer caches from one forward pass, consumed by the backward pass."""

    mode: str
    entries: list[tuple[str, np.ndarray]] = field(default_factory=list)


# Output rows per column-lowering tile. Small tiles keep the per-tile column
# block cache-resident, which matters more than GEMM size on bandwidth-bound
# hosts (measured ~4x over whole-image im2col at 64x64).
_TILE_ROWS = 4


def conv2d_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Stride-1 zero-same-padded convolution.

    out[n,o,y,x] = bias[o] + sum_{i,dy,dx} w[o,i,dy,dx] * in[n,i,y+dy-kh//2,x+dx-kw//2],
    with out-of-bounds taps reading as zero. Lowered to one GEMM per row
    tile over (c_in * k_h * k_w) columns.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv input must be rank 4, got shape {x.shape}")
    if x.shape[1] != layer.in_channels:
        raise ShapeError(f"conv expects {layer.in_channels} input channels, got {x.shape[1]}")
    n, c_in, h, w = x.shape
    k_h, k_w = layer.kernel
    c_out = layer.out_channels

    weights = layer.weights.astype(x.dtype, copy=False)
    bias = layer.bias.astype(x.dtype, copy=False)

    if k_h == 1 and k_w == 1:
        # 1x1 kernels are a per-pixel linear map; no column lowering needed.
        out = weights.reshape(c_out, c_in) @ x.reshape(n, c_in, h * w)
        out = out.reshape(n, c_out, h, w).copy()
        out += bias[None, :, None, None]
        return out

    p_h, p_w = k_h // 2, k_w // 2
    padded = np.pad(x, ((0, 0), (0, 0), (p_h, p_h), (p_w, p_w)))
    w2 = weights.reshape(c_out, -1)
    out = np.empty((n, c_out, h, w), dtype=x.dtype)
    tile = _TILE_ROWS
    cols = np.empty((n, c_in, k_h, k_w, min(tile, h), w), dtype=x.dtype)
    for y0 in range(0, h, tile):
        t = min(tile, h - y0)
        ct = cols[:, :, :, :, :t]
        for dy in range(k_h):
            for dx in range(k_w):
                ct[:, :, dy, dx] = padded[:, :, y0 + dy : y0 + dy + t, dx : dx + w]
        res = w2 @ ct.reshape(n, c_in * k_h * k_w, t * w)
        out[:, :, y0 : y0 + t] = res.reshape(n, c_out, t, w)
    out += bias[None, :, None, None]
    return out


def _conv_grad_weights(x: np.ndarray, layer: ConvLayer, grad_out: np.ndarray) -> np.ndarray:
    """dW[o,i,dy,dx] = sum_{n,y,x} grad_out[n,o,y,x] * padded_in[n,i,y+dy,x+dx]."""
    n, c_in, h, w = x.shape
    k_h, k_w = layer.kernel
    c_out = layer.out_channels
    p_h, p_w = k_h // 2, k_w // 2
    padded = np.pad(x, ((0, 0), (0, 0), (p_h, p_h), (p_w, p_w)))
    acc = np.zeros((c_out, c_in * k_h * k_w), dtype=x.dtype)
    tile = _TILE_ROWS
    cols = np.empty((n, c_in, k_h, k_w, min(tile, h), w), dtype=x.dtype)
    for y0 in range(0, h, tile):
        t = min(tile, h - y0)
        ct = cols[:, :, :, :, :t]
        for dy in range(k_h):
            for dx in range(k_w):
                ct[:, :, dy, dx] = padded[:, :, y0 + dy : y0 + dy + t, dx : dx + w]
        g_tile = grad_out[:, :, y0 : y0 + t].reshape(n, c_out, t * w)
        flat = ct.reshape(n, c_in * k_h * k_w, t * w)
        acc += np.matmul(g_tile, flat.transpose(0, 2, 1)).sum(axis=0)
    return acc.reshape(layer.weights.shape)


def conv2d_backward(
    x: np.ndarray, layer: ConvLayer, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic gradients of ``conv2d_forward``.

    Returns (grad_input, grad_weights, grad_bias). The input gradient of a
    same-padded stride-1 convolution is the same convolution of grad_out
    with the kernel flipped spatially and its channel axes swapped.
    """
    if grad_out.shape != (x.shape[0], layer.out_channels, x.shape[2], x.shape[3]):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match conv output "
            f"({x.shape[0]}, {layer.out_channels}, {x.shape[2]}, {x.shape[3]})"
        )
    n, c_in, h, w = x.shape
    k_h, k_w = layer.kernel
    weights = layer.weights.astype(x.dtype, copy=False)

    grad_bias = grad_out.sum(axis=(0, 2, 3))

    if k_h == 1 and k_w == 1:
        gout = grad_out.reshape(n, layer.out_channels, h * w)
        cols = x.reshape(n, c_in, h * w)
        grad_weights = np.matmul(gout, cols.transpose(0, 2, 1)).sum(axis=0)
        grad_weights = grad_weights.reshape(layer.weights.shape)
        mat = weights.reshape(layer.out_channels, c_in)
        grad_input = (mat.T @ gout).reshape(x.shape).copy()
        return grad_input, grad_weights, grad_bias

    grad_weights = _conv_grad_weights(x, layer, grad_out)
    flipped = weights[:, :, ::-1, ::-1].swapaxes(0, 1)
    rotated = ConvLayer(np.ascontiguousarray(flipped), np.zeros(c_in, dtype=x.dtype))
    grad_input = conv2d_forward(grad_out, rotated)
    return grad_input, grad_weights, grad_bias


def leaky_relu_forward(x: np.ndarray, slope: float) -> np.ndarray:
    if not 0.0 < slope < 1.0:
        raise ParameterError(f"leaky slope must be in (0, 1), got {slope}")
    return np.where(x > 0, x, x * x.dtype.type(slope))


def leaky_relu_backward(x: np.ndarray, slope: float, grad_out: np.ndarray) -> np.ndarray:
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != input shape {x.shape}")
    return grad_out * np.where(x > 0, x.dtype.type(1.0), x.dtype.type(slope))


def dropout_forward(
    x: np.ndarray, drop_prob: float, mode: str, rng: Rng | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout. Returns (output, mask); output == x * mask.

    Train mode zeroes each element with probability ``drop_prob`` and scales
    survivors by 1/(1-drop_prob); eval mode is the exact identity. Mask
    elements are exactly 0 or 1/(1-drop_prob).
    """
    if not 0.0 <= drop_prob < 1.0:
        raise ParameterError(f"drop probability must be in [0, 1), got {drop_prob}")
    if mode not in (TRAIN, EVAL):
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == EVAL or drop_prob == 0.0:
        mask = np.ones_like(x)
        return x.copy(), mask
    if rng is None:
        raise ParameterError("train-mode dropout with drop_prob > 0 requires an rng")
    keep = rng.uniform_array(x.shape) >= drop_prob
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - drop_prob))
    return x * mask, mask


def dropout_backward(mask: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    if grad_out.shape != mask.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != mask shape {mask.shape}")
    return grad_out * mask


def build_interpolator(
    input_channels: int = 6,
    embed_dim: int = 32,
    slope: float = 0.1,
    drop_prob: float = 0.1,
) -> NetworkSpec:
    """The 7-convolution interpolation network.

    Layer 1 is a 1x1 pixel-embedding convolution (activation only, no
    dropout); layers 2-6 are Filter+LeakyReLU+Dropout blocks whose kernels
    shrink (7x7, 5x5, 5x5, 3x3, 3x3) while filter counts grow (1x, 1x, 2x,
    2x, 4x, 4x embed_dim); layer 7 is a linear 1x1 reduction to RGB.
    """
    if embed_dim < 3:
        raise ParameterError(f"embed_dim must be >= 3, got {embed_dim}")
    e = embed_dim
    schedule = [
        (input_channels, e, 1),
        (e, e, 7),
        (e, 2 * e, 5),
        (2 * e, 2 * e, 5),
        (2 * e, 4 * e, 3),
        (4 * e, 4 * e, 3),
        (4 * e, 3, 1),
    ]
    layers: list[LayerSpec] = []
    last = len(schedule) - 1
    for i, (c_in, c_out, k) in enumerate(schedule):
        layers.append(conv_spec(c_in, c_out, k))
        if i == last:
            break  # final 1x1 stays linear
        layers.append(leaky_relu_spec(slope))
        if i > 0 and drop_prob > 0.0:
            layers.append(dropout_spec(drop_prob))
    return NetworkSpec(tuple(layers), input_channels)


def init_params(net: NetworkSpec, rng: Rng, dtype=np.float32) -> list[ConvLayer]:
    """He-style initialization corrected for the leaky slope; biases start at zero."""
    slope = next((s.slope for s in net.layers if s.kind == LEAKY_RELU), 0.1)
    params = []
    for spec in net.conv_layers():
        k_h, k_w = spec.kernel
        fan_in = spec.in_channels * k_h * k_w
        stddev = float(np.sqrt(2.0 / (fan_in * (1.0 + slope * slope))))
        shape = (spec.out_channels, spec.in_channels, k_h, k_w)
        weights = rng.normal_array(shape, 0.0, stddev).astype(dtype)
        bias = np.zeros(spec.out_channels, dtype=dtype)
        params.append(ConvLayer(weights, bias))
    return params


def _check_params(net: NetworkSpec, params: list[ConvLayer]) -> None:
    convs = net.conv_layers()
    if len(params) != len(convs):
        raise StateError(f"network has {len(convs)} conv layers but got {len(params)} parameter sets")
    for i, (spec, layer) in enumerate(zip(convs, params)):
        expected = (spec.out_channels, spec.in_channels, *spec.kernel)
        if layer.weights.shape != expected:
            raise StateError(f"conv {i}: weights shape {layer.weights.shape} != spec {expected}")


def network_forward(
    net: NetworkSpec,
    params: list[ConvLayer],
    x: np.ndarray,
    mode: str = EVAL,
    rng: Rng | None = None,
) -> tuple[np.ndarray, ForwardTrace]:
    """Run the network, caching what the backward pass needs."""
    if mode not in (TRAIN, EVAL):
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    if x.ndim != 4 or x.shape[1] != net.input_channels:
        raise ShapeError(f"network expects (n, {net.input_channels}, h, w) input, got {x.shape}")
    _check_params(net, params)
    trace = ForwardTrace(mode=mode)
    out = x
    conv_idx = 0
    for spec in net.layers:
        if spec.kind == CONV:
            trace.entries.append((CONV, out))
            out = conv2d_forward(out, params[conv_idx])
            conv_idx += 1
        elif spec.kind == LEAKY_RELU:
            trace.entries.append((LEAKY_RELU, out))
            out = leaky_relu_forward(out, spec.slope)
        else:
            out, mask = dropout_forward(out, spec.drop_prob, mode, rng)
            trace.entries.append((DROPOUT, mask))
    return out, trace


def network_backward(
    net: NetworkSpec,
    params: list[ConvLayer],
    trace: ForwardTrace,
    grad_output: np.ndarray,
    inject: dict[int, np.ndarray] | None = None,
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Backpropagate through the whole network.

    Returns (per-conv (grad_weights, grad_bias) in layer order, grad_input).
    ``inject`` optionally adds extra gradient at the *output* of given layer
    indices, which feature-space losses use to tap intermediate activations.
    """
    if len(trace.entries) != len(net.layers):
        raise StateError(
            f"trace has {len(trace.entries)} entries but network has {len(net.layers)} layers"
        )
    _check_params(net, params)
    conv_positions = [i for i, spec in enumerate(net.layers) if spec.kind == CONV]
    param_grads: list[tuple[np.ndarray, np.ndarray] | None] = [None] * len(conv_positions)

    grad = grad_output
    conv_idx = len(conv_positions)
    for i in range(len(net.layers) - 1, -1, -1):
        spec = net.layers[i]
        kind, cached = trace.entries[i]
        if kind != spec.kind:
            raise StateError(f"trace entry {i} is {kind!r} but network layer is {spec.kind!r}")
        if inject and i in inject:
            grad = grad + inject[i]
        if spec.kind == CONV:
            conv_idx -= 1
            grad, g_w, g_b = conv2d_backward(cached, params[conv_idx], grad)
            param_grads[conv_idx] = (g_w, g_b)
        elif spec.kind == LEAKY_RELU:
            grad = leaky_relu_backward(cached, spec.slope, grad)
        else:
            grad = dropout_backward(cached, grad)
    if inject and -1 in inject:
        grad = grad + inject[-1]
    return param_grads, grad  # type: ignore[return-value]


def manifest_text(net: NetworkSpec) -> str:
    """Human-readable manifest: one layer per line, embedded in checkpoints."""
    lines = [f"input_channels {net.input_channels}"]
    for spec in net.layers:
        if spec.kind == CONV:
            lines.append(f"conv {spec.in_channels} {spec.out_channels} {spec.kernel[0]} {spec.kernel[1]}")
        elif spec.kind == LEAKY_RELU:
            lines.append(f"leaky_relu {spec.slope!r}")
        else:
            lines.append(f"dropout {spec.drop_prob!r}")
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> NetworkSpec:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("input_channels "):
        raise FormatError("network manifest must start with an input_channels line")
    input_channels = int(lines[0].split()[1])
    layers: list[LayerSpec] = []
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "conv" and len(parts) == 5:
            layers.append(conv_spec(int(parts[1]), int(parts[2]), (int(parts[3]), int(parts[4]))))
        elif parts[0] == "leaky_relu" and len(parts) == 2:
            layers.append(leaky_relu_spec(float(parts[1])))
        elif parts[0] == "dropout" and len(parts) == 2:
            layers.append(dropout_spec(float(parts[1])))
        else:
            raise FormatError(f"unparseable network manifest line: {ln!r}")
    return NetworkSpec(tuple(layers), input_channels)
