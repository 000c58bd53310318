"""Rank-4 tensor values, deterministic random sampling, and the raw dump format.

Everything downstream moves data as (batch, channel, height, width) float32
arrays in row-major order. The ``Tensor`` class is a validated, immutable
carrier for module boundaries; the heavy numeric kernels operate on plain
numpy arrays.
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Callable, Sequence

import numpy as np

from .errors import FormatError, IntegrityError, NumericError, ParameterError, ShapeError

TENSOR_MAGIC = b"FWTN"
TENSOR_VERSION = 1

Shape4 = tuple[int, int, int, int]


def _validate_shape(shape: Sequence[int]) -> Shape4:
    if len(shape) != 4:
        raise ShapeError(f"expected 4 dimensions (n, c, h, w), got {tuple(shape)}")
    dims = tuple(int(d) for d in shape)
    if any(d < 1 for d in dims):
        raise ShapeError(f"all dimensions must be >= 1, got {dims}")
    return dims  # type: ignore[return-value]


class Tensor:
    """Immutable (n, c, h, w) float32 array.

    Element (n, c, y, x) lives at flat index ((n*C + c)*H + y)*W + x. Every
    element is finite; the backing buffer is frozen after construction so
    instances are safe to share across threads.
    """

    __slots__ = ("_data",)

    def __init__(self, data) -> None:
        arr = np.array(data, dtype=np.float32, order="C", copy=True)
        _validate_shape(arr.shape)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor contains non-finite values")
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        """Take ownership of a freshly built float32 array (no copy)."""
        self = object.__new__(cls)
        _validate_shape(arr.shape)
        if arr.dtype != np.float32 or not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr, dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor contains non-finite values")
        arr.flags.writeable = False
        self._data = arr
        return self

    @classmethod
    def full(cls, shape: Sequence[int], fill: float) -> "Tensor":
        dims = _validate_shape(shape)
        if not np.isfinite(fill):
            raise NumericError(f"fill value must be finite, got {fill!r}")
        return cls._wrap(np.full(dims, fill, dtype=np.float32))

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "Tensor":
        return cls.full(shape, 0.0)

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the backing array."""
        return self._data

    @property
    def shape(self) -> Shape4:
        return self._data.shape  # type: ignore[return-value]

    @property
    def size(self) -> int:
        return int(self._data.size)

    def __array__(self, dtype=None):
        if dtype is None:
            return self._data
        return self._data.astype(dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def map2(a: Tensor, b: Tensor, op: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> Tensor:
    """Apply an elementwise binary op, returning a new tensor.

    ``op`` must accept two equally shaped arrays and return an array of the
    same shape (e.g. ``np.add``). Inputs are never modified.
    """
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    out = np.asarray(op(a.data, b.data), dtype=np.float32)
    if out.shape != a.shape:
        raise ShapeError(f"op changed shape: {a.shape} -> {out.shape}")
    return Tensor._wrap(out.copy())


def flat_index(shape: Sequence[int], n: int, c: int, y: int, x: int) -> int:
    """Row-major flat address of element (n, c, y, x)."""
    _, C, H, W = _validate_shape(shape)
    return ((n * C + c) * H + y) * W + x


def coords_of(shape: Sequence[int], index: int) -> tuple[int, int, int, int]:
    """Inverse of ``flat_index``."""
    _, C, H, W = _validate_shape(shape)
    x = index % W
    rest = index // W
    y = rest % H
    rest //= H
    c = rest % C
    n = rest // C
    return n, c, y, x


class Rng:
    """Counter-based deterministic random source.

    Each draw call derives a fresh Philox stream from (seed, stream) plus a
    per-call counter, so the sequence depends only on the seed and the order
    of calls: the state that must survive a checkpoint is the single counter
    value. Splitting off an independent stream never perturbs the parent.
    """

    __slots__ = ("seed", "stream", "counter")

    def __init__(self, seed: int, stream: int = 0, counter: int = 0) -> None:
        if not 0 <= int(seed) < 2**64:
            raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
        if not 0 <= int(stream) < 2**64:
            raise ParameterError(f"stream must be a 64-bit unsigned integer, got {stream!r}")
        if not 0 <= int(counter) < 2**64:
            raise ParameterError(f"counter must be a 64-bit unsigned integer, got {counter!r}")
        self.seed = int(seed)
        self.stream = int(stream)
        self.counter = int(counter)

    def split(self, stream: int) -> "Rng":
        """Independent stream sharing this generator's seed."""
        return Rng(self.seed, stream=stream)

    def _next_generator(self) -> np.random.Generator:
        # Each call gets its own 2^64-block slice of the Philox counter space.
        key = (self.seed << 64) | self.stream
        bitgen = np.random.Philox(key=key, counter=self.counter << 64)
        self.counter += 1
        return np.random.Generator(bitgen)

    def uniform_array(self, shape: Sequence[int]) -> np.ndarray:
        """float64 samples in [0, 1) with the given (arbitrary-rank) shape."""
        dims = tuple(int(d) for d in shape)
        n = int(np.prod(dims)) if dims else 1
        gen = self._next_generator()
        return gen.random(n).reshape(dims)

    def normal_array(self, shape: Sequence[int], mean: float = 0.0, stddev: float = 1.0) -> np.ndarray:
        """float64 Gaussian samples via Box-Muller on Philox uniforms.

        Box-Muller keeps the output a pure function of the uniform stream,
        so sequences replay bit-for-bit across platforms and numpy versions.
        """
        if stddev < 0:
            raise ParameterError(f"stddev must be >= 0, got {stddev}")
        dims = tuple(int(d) for d in shape)
        n = int(np.prod(dims)) if dims else 1
        pairs = (n + 1) // 2
        gen = self._next_generator()
        u = gen.random(2 * pairs)
        # log1p(-u1) maps u1 in [0,1) to log of (0,1], avoiding log(0).
        radius = np.sqrt(-2.0 * np.log1p(-u[:pairs]))
        angle = (2.0 * np.pi) * u[pairs:]
        z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:n]
        return (mean + stddev * z).reshape(dims)

    def uniform(self, shape: Sequence[int]) -> Tensor:
        _validate_shape(shape)
        return Tensor._wrap(self.uniform_array(shape).astype(np.float32))

    def normal(self, shape: Sequence[int], mean: float = 0.0, stddev: float = 1.0) -> Tensor:
        _validate_shape(shape)
        return Tensor._wrap(self.normal_array(shape, mean, stddev).astype(np.float32))

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic shuffle of range(n)."""
        if n < 0:
            raise ParameterError(f"permutation length must be >= 0, got {n}")
        keys = self.uniform_array((n,))
        return np.argsort(keys, kind="stable")


def write_tensor_block(fh: BinaryIO, arr: np.ndarray) -> None:
    """Append one raw tensor block: FWTN magic, u32 version, u32 x 4 dims, f32 payload.

    All integers and floats are little-endian.
    """
    dims = _validate_shape(arr.shape)
    data = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<I", TENSOR_VERSION))
    fh.write(struct.pack("<4I", *dims))
    fh.write(data.tobytes())


def read_tensor_block(fh: BinaryIO) -> np.ndarray:
    """Read one block written by ``write_tensor_block``."""
    magic = fh.read(4)
    if len(magic) < 4:
        raise IntegrityError("truncated tensor block header")
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    raw = fh.read(20)
    if len(raw) < 20:
        raise IntegrityError("truncated tensor block header")
    version, = struct.unpack("<I", raw[:4])
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported tensor version {version}")
    dims = struct.unpack("<4I", raw[4:])
    if any(d < 1 for d in dims):
        raise FormatError(f"tensor block has zero dimension {dims}")
    count = int(np.prod(dims))
    payload = fh.read(4 * count)
    if len(payload) < 4 * count:
        raise IntegrityError("truncated tensor payload")
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return arr.astype(np.float32)


def save_tensor(path, tensor: Tensor) -> None:
    with open(path, "wb") as fh:
        write_tensor_block(fh, tensor.data)


def load_tensor(path) -> Tensor:
    with open(path, "rb") as fh:
        return Tensor._wrap(read_tensor_block(fh))
