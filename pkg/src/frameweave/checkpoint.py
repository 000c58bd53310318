"""Checkpoint container: network manifest, parameters, optimizer state, counters.

Layout (all integers little-endian):

    magic 'FWCK', u32 version=1
    u32 manifest length, manifest text (one layer per line)
    per conv layer: weights tensor block, bias tensor block
    u32 optimizer kind (0=adam, 1=sgd), f64 lr/beta1/beta2/epsilon/momentum,
        u64 step count, u32 block count, moment tensor blocks
    u64 epoch, u64 rng counter
    u32 config length, config snapshot text

Bias vectors and their moment slots are stored as (1, c, 1, 1) tensor
blocks. A loaded checkpoint reproduces forward outputs bit-exactly.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, IntegrityError
from .layers import ConvLayer, NetworkSpec, manifest_text, parse_manifest
from .optim import ADAM, SGD, OptimState, make_optim_state
from .tensor import read_tensor_block, write_tensor_block

CHECKPOINT_MAGIC = b"FWCK"
CHECKPOINT_VERSION = 1

_OPT_CODES = {ADAM: 0, SGD: 1}
_OPT_KINDS = {code: kind for kind, code in _OPT_CODES.items()}


@dataclass
class Checkpoint:
    net: NetworkSpec
    params: list[ConvLayer]
    optim: OptimState
    epoch: int
    rng_counter: int
    config_text: str


def _write_vector_block(fh, vec: np.ndarray) -> None:
    write_tensor_block(fh, vec.reshape(1, vec.size, 1, 1))


def _flat_moments(state: OptimState) -> list[np.ndarray]:
    if state.kind == ADAM:
        return list(state.m) + list(state.v)
    return list(state.m)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))

    manifest = manifest_text(ckpt.net).encode("utf-8")
    buf.write(struct.pack("<I", len(manifest)))
    buf.write(manifest)

    for layer in ckpt.params:
        write_tensor_block(buf, layer.weights)
        _write_vector_block(buf, layer.bias)

    state = ckpt.optim
    buf.write(struct.pack("<I", _OPT_CODES[state.kind]))
    buf.write(struct.pack("<5d", state.lr, state.beta1, state.beta2, state.epsilon, state.momentum))
    buf.write(struct.pack("<Q", state.t))
    moments = _flat_moments(state)
    buf.write(struct.pack("<I", len(moments)))
    for slot in moments:
        if slot.ndim == 4:
            write_tensor_block(buf, slot)
        else:
            _write_vector_block(buf, slot)

    buf.write(struct.pack("<QQ", ckpt.epoch, ckpt.rng_counter))
    config = ckpt.config_text.encode("utf-8")
    buf.write(struct.pack("<I", len(config)))
    buf.write(config)

    Path(path).write_bytes(buf.getvalue())


def _read_exact(fh: io.BytesIO, n: int, what: str) -> bytes:
    raw = fh.read(n)
    if len(raw) < n:
        raise IntegrityError(f"checkpoint truncated while reading {what}")
    return raw


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    fh = io.BytesIO(raw)

    magic = _read_exact(fh, 4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
    version, = struct.unpack("<I", _read_exact(fh, 4, "version"))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")

    manifest_len, = struct.unpack("<I", _read_exact(fh, 4, "manifest length"))
    net = parse_manifest(_read_exact(fh, manifest_len, "manifest").decode("utf-8"))

    params = []
    for spec in net.conv_layers():
        weights = read_tensor_block(fh)
        bias = read_tensor_block(fh).reshape(-1)
        expected = (spec.out_channels, spec.in_channels, *spec.kernel)
        if weights.shape != expected:
            raise FormatError(f"{path}: weights block shape {weights.shape} != manifest {expected}")
        if bias.size != spec.out_channels:
            raise FormatError(f"{path}: bias block size {bias.size} != {spec.out_channels}")
        params.append(ConvLayer(weights, bias))

    kind_code, = struct.unpack("<I", _read_exact(fh, 4, "optimizer kind"))
    if kind_code not in _OPT_KINDS:
        raise FormatError(f"{path}: unknown optimizer code {kind_code}")
    kind = _OPT_KINDS[kind_code]
    lr, beta1, beta2, epsilon, momentum = struct.unpack("<5d", _read_exact(fh, 40, "optimizer hyperparams"))
    t, = struct.unpack("<Q", _read_exact(fh, 8, "optimizer step count"))
    n_blocks, = struct.unpack("<I", _read_exact(fh, 4, "optimizer block count"))

    param_arrays = []
    for layer in params:
        param_arrays.extend([layer.weights, layer.bias])
    expected_blocks = 2 * len(param_arrays) if kind == ADAM else len(param_arrays)
    if n_blocks != expected_blocks:
        raise FormatError(f"{path}: expected {expected_blocks} optimizer blocks, got {n_blocks}")

    state = make_optim_state(kind, param_arrays, lr, beta1, beta2, epsilon, momentum)
    state.t = t
    slots = []
    for _ in range(n_blocks):
        slots.append(read_tensor_block(fh))
    per = len(param_arrays)
    for i, ref in enumerate(param_arrays):
        state.m[i] = slots[i].reshape(ref.shape)
        if kind == ADAM:
            state.v[i] = slots[per + i].reshape(ref.shape)

    epoch, rng_counter = struct.unpack("<QQ", _read_exact(fh, 16, "epoch and rng state"))
    config_len, = struct.unpack("<I", _read_exact(fh, 4, "config length"))
    config_text = _read_exact(fh, config_len, "config snapshot").decode("utf-8")

    return Checkpoint(net, params, state, int(epoch), int(rng_counter), config_text)
