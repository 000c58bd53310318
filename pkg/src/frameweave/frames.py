"""Frame image I/O, triplet extraction, dataset packing, and synthetic motion data.

PPM (P6, maxval 255) is the bit-exact reference format; PNG (8-bit RGB,
via Pillow) is supported for convenience. Video containers are out of
scope: decode video to numbered frames externally (see README).
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    DatasetError,
    DecodeError,
    IntegrityError,
    FormatError,
    ParameterError,
    ShapeError,
)
from .tensor import Rng, Tensor, read_tensor_block, write_tensor_block

DATASET_MAGIC = b"FWDS"
DATASET_VERSION = 1


@dataclass(frozen=True)
class Frame:
    """One decoded RGB frame: pixels (1, 3, h, w) in [0, 1] plus its temporal index."""

    pixels: Tensor
    source_index: int = 0

    def __post_init__(self) -> None:
        n, c, _, _ = self.pixels.shape
        if n != 1 or c != 3:
            raise ShapeError(f"frame pixels must be shaped (1, 3, h, w), got {self.pixels.shape}")
        data = self.pixels.data
        if data.min() < 0.0 or data.max() > 1.0:
            raise ShapeError("frame pixel values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[2]

    @property
    def width(self) -> int:
        return self.pixels.shape[3]


@dataclass(frozen=True)
class FrameTriplet:
    """Three consecutive frames; outer two are model input, middle is ground truth."""

    frame_a: Frame
    frame_mid: Frame
    frame_b: Frame

    def __post_init__(self) -> None:
        dims = {(f.height, f.width) for f in (self.frame_a, self.frame_mid, self.frame_b)}
        if len(dims) != 1:
            raise ShapeError(f"triplet frames disagree on dimensions: {sorted(dims)}")
        if not (self.frame_a.source_index < self.frame_mid.source_index < self.frame_b.source_index):
            raise DatasetError(
                "triplet source indices must be strictly increasing, got "
                f"({self.frame_a.source_index}, {self.frame_mid.source_index}, {self.frame_b.source_index})"
            )

    @property
    def height(self) -> int:
        return self.frame_a.height

    @property
    def width(self) -> int:
        return self.frame_a.width


@dataclass
class Dataset:
    """Ordered triplets with uniform frame dimensions."""

    triplets: list[FrameTriplet]

    def __post_init__(self) -> None:
        if not self.triplets:
            raise DatasetError("dataset must contain at least one triplet")
        dims = {(t.height, t.width) for t in self.triplets}
        if len(dims) != 1:
            raise DatasetError(f"dataset mixes frame dimensions: {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.triplets)

    @property
    def frame_size(self) -> tuple[int, int]:
        return self.triplets[0].height, self.triplets[0].width


def quantize(values: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] then round-half-up to 8-bit: byte = floor(255*v + 0.5)."""
    clamped = np.clip(values, 0.0, 1.0)
    return np.floor(clamped * 255.0 + 0.5).astype(np.uint8)


def _frame_from_rgb_bytes(rgb: np.ndarray, source_index: int) -> Frame:
    arr = rgb.astype(np.float32) / 255.0
    pixels = arr.transpose(2, 0, 1)[None]  # (h, w, 3) -> (1, 3, h, w)
    return Frame(Tensor._wrap(np.ascontiguousarray(pixels)), source_index)


def _frame_to_rgb_bytes(frame: Frame) -> np.ndarray:
    return quantize(frame.pixels.data[0].transpose(1, 2, 0))  # (h, w, 3) uint8


_PPM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")  # used with .match(raw, pos)


def _read_ppm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    pos = 0
    tokens = []
    for _ in range(4):  # magic, width, height, maxval
        m = _PPM_TOKEN.match(raw, pos)
        if m is None:
            raise DecodeError(f"{path}: truncated PPM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P6":
        raise DecodeError(f"{path}: not a binary PPM (P6) file")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DecodeError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise DecodeError(f"{path}: only maxval 255 PPM is supported, got {maxval}")
    if width < 1 or height < 1:
        raise DecodeError(f"{path}: bad PPM dimensions {width}x{height}")
    pos += 1  # single whitespace byte separates header from pixel data
    need = width * height * 3
    payload = raw[pos : pos + need]
    if len(payload) < need:
        raise DecodeError(f"{path}: PPM pixel data truncated ({len(payload)} of {need} bytes)")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)


def _write_ppm(path: Path, rgb: np.ndarray) -> None:
    height, width, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (width, height))
        fh.write(np.ascontiguousarray(rgb).tobytes())


def read_frame(path, source_index: int = 0) -> Frame:
    """Decode a PPM or PNG file; byte p maps to p/255.0, top-left origin."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        rgb = _read_ppm(path)
    elif suffix == ".png":
        try:
            with Image.open(path) as img:
                rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
        except (OSError, SyntaxError) as exc:
            raise DecodeError(f"{path}: {exc}") from exc
    else:
        raise DecodeError(f"{path}: unsupported frame format {suffix!r} (need .ppm or .png)")
    return _frame_from_rgb_bytes(rgb, source_index)


def write_frame(frame: Frame, path, format: str | None = None) -> None:
    """Encode a frame, quantizing values with clamp + round-half-up."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    rgb = _frame_to_rgb_bytes(frame)
    if fmt == "ppm":
        _write_ppm(path, rgb)
    elif fmt == "png":
        try:
            Image.fromarray(rgb, mode="RGB").save(path, format="PNG")
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
    else:
        raise ParameterError(f"unsupported frame format {fmt!r} (need 'ppm' or 'png')")


_FRAME_FILE = re.compile(r"^frame_\d{6}\.(ppm|png)$")


def load_frame_dir(directory) -> list[Frame]:
    """Load frame_%06d.ppm/png files; lexicographic order is temporal order."""
    directory = Path(directory)
    paths = sorted(p for p in directory.iterdir() if _FRAME_FILE.match(p.name))
    if not paths:
        raise DatasetError(f"{directory}: no frame_NNNNNN.ppm/png files found")
    return [read_frame(p, source_index=i) for i, p in enumerate(paths)]


def extract_triplets(frames: list[Frame], stride: int = 1) -> list[FrameTriplet]:
    """Window triples (s, s+1, s+2) with window starts advancing by ``stride``."""
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if len(frames) < 3:
        raise DatasetError(f"need at least 3 frames to form a triplet, got {len(frames)}")
    dims = {(f.height, f.width) for f in frames}
    if len(dims) != 1:
        raise ShapeError(f"frames disagree on dimensions: {sorted(dims)}")
    triplets = []
    for start in range(0, len(frames) - 2, stride):
        triplets.append(FrameTriplet(frames[start], frames[start + 1], frames[start + 2]))
    return triplets


def average_baseline(triplet: FrameTriplet) -> Frame:
    """Naive interpolation comparator: the per-pixel mean of the outer frames."""
    mean = (triplet.frame_a.pixels.data + triplet.frame_b.pixels.data) * 0.5
    return Frame(Tensor._wrap(mean.copy()), triplet.frame_mid.source_index)


# ---------------------------------------------------------------------------
# Synthetic moving-shape scenes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    radius: float
    color: tuple[float, float, float]


@dataclass(frozen=True)
class Box:
    cx: float
    cy: float
    half_w: float
    half_h: float
    color: tuple[float, float, float]


Shape = Circle | Box


def render_scene(
    size: tuple[int, int],
    background: tuple[float, float, float],
    shapes: list[Shape],
    offset: tuple[float, float] = (0.0, 0.0),
) -> Tensor:
    """Render anti-aliased shapes over a solid background.

    Pixel (y, x) covers the unit square centered on integer coordinates;
    shape coverage is the (approximate) overlap area, so sub-pixel offsets
    change pixel values smoothly. ``offset`` shifts every shape by (dx, dy).
    """
    h, w = size
    dx, dy = offset
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    canvas = np.empty((h, w, 3), dtype=np.float64)
    canvas[:] = np.asarray(background, dtype=np.float64)
    for shape in shapes:
        if isinstance(shape, Circle):
            dist = np.sqrt((xs - (shape.cx + dx)) ** 2 + (ys - (shape.cy + dy)) ** 2)
            coverage = np.clip(shape.radius + 0.5 - dist, 0.0, 1.0)
        else:
            cov_x = np.clip(
                np.minimum(xs + 0.5, shape.cx + dx + shape.half_w)
                - np.maximum(xs - 0.5, shape.cx + dx - shape.half_w),
                0.0,
                1.0,
            )
            cov_y = np.clip(
                np.minimum(ys + 0.5, shape.cy + dy + shape.half_h)
                - np.maximum(ys - 0.5, shape.cy + dy - shape.half_h),
                0.0,
                1.0,
            )
            coverage = cov_x * cov_y
        color = np.asarray(shape.color, dtype=np.float64)
        canvas = canvas * (1.0 - coverage[..., None]) + color * coverage[..., None]
    pixels = np.clip(canvas, 0.0, 1.0).transpose(2, 0, 1)[None].astype(np.float32)
    return Tensor._wrap(np.ascontiguousarray(pixels))


def scene_triplet(
    size: tuple[int, int],
    background: tuple[float, float, float],
    shapes: list[Shape],
    velocity: tuple[float, float],
    base_index: int = 0,
) -> FrameTriplet:
    """Triplet of one scene translating at constant velocity (px/frame).

    The middle frame is exactly the half-displacement rendering, so the
    ground truth is consistent with linear motion.
    """
    vx, vy = velocity
    frames = []
    for step, (dx, dy) in enumerate([(0.0, 0.0), (vx / 2.0, vy / 2.0), (vx, vy)]):
        pixels = render_scene(size, background, shapes, offset=(dx, dy))
        frames.append(Frame(pixels, base_index + step))
    return FrameTriplet(*frames)


def synth_motion_dataset(count: int, size: tuple[int, int], rng: Rng) -> Dataset:
    """Random moving-shape triplets: 1-3 shapes per scene, |velocity| <= 3 px/frame."""
    if count <= 0:
        raise ParameterError(f"triplet count must be > 0, got {count}")
    h, w = size
    if h < 16 or w < 16:
        raise ParameterError(f"frame size must be at least 16x16, got {h}x{w}")
    smaller = min(h, w)
    triplets = []
    for i in range(count):
        background = tuple(rng.uniform_array((3,)))
        n_shapes = 1 + int(rng.uniform_array(())[()] * 3.0)
        shapes: list[Shape] = []
        for _ in range(n_shapes):
            u = rng.uniform_array((8,))
            color = (u[0], u[1], u[2])
            cx = (0.15 + 0.7 * u[3]) * w
            cy = (0.15 + 0.7 * u[4]) * h
            if u[5] < 0.5:
                radius = (0.08 + 0.14 * u[6]) * smaller
                shapes.append(Circle(cx, cy, radius, color))
            else:
                half_w = (0.06 + 0.12 * u[6]) * smaller
                half_h = (0.06 + 0.12 * u[7]) * smaller
                shapes.append(Box(cx, cy, half_w, half_h, color))
        v = rng.uniform_array((2,)) * 6.0 - 3.0
        triplets.append(scene_triplet(size, background, shapes, (v[0], v[1]), base_index=3 * i))
    return Dataset(triplets)


# ---------------------------------------------------------------------------
# Packed dataset cache
# ---------------------------------------------------------------------------


def save_dataset(path, dataset: Dataset) -> None:
    """Write the FWDS container: magic, u32 version, u32 count, 3 tensor blocks per triplet."""
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", DATASET_VERSION))
        fh.write(struct.pack("<I", len(dataset.triplets)))
        for triplet in dataset.triplets:
            for frame in (triplet.frame_a, triplet.frame_mid, triplet.frame_b):
                write_tensor_block(fh, frame.pixels.data)


def load_dataset_file(path) -> Dataset:
    """Read an FWDS container. Frame indices are reassigned as 3i, 3i+1, 3i+2."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if len(magic) < 4:
            raise IntegrityError(f"{path}: truncated dataset header")
        if magic != DATASET_MAGIC:
            raise FormatError(f"{path}: bad dataset magic {magic!r}")
        raw = fh.read(8)
        if len(raw) < 8:
            raise IntegrityError(f"{path}: truncated dataset header")
        version, count = struct.unpack("<II", raw)
        if version != DATASET_VERSION:
            raise FormatError(f"{path}: unsupported dataset version {version}")
        triplets = []
        for i in range(count):
            frames = []
            for j in range(3):
                arr = read_tensor_block(fh)
                frames.append(Frame(Tensor._wrap(arr.copy()), 3 * i + j))
            triplets.append(FrameTriplet(*frames))
    return Dataset(triplets)


def load_dataset(path, stride: int = 1) -> Dataset:
    """Load a packed .fwds file, or a directory of frames windowed into triplets."""
    path = Path(path)
    if path.is_file():
        return load_dataset_file(path)
    if path.is_dir():
        return Dataset(extract_triplets(load_frame_dir(path), stride=stride))
    raise DatasetError(f"{path}: not a dataset file or frame directory")
