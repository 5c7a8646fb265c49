"""Raw planar YUV 4:2:0 (I420) video: containers, reader and writer.

8-bit files store one byte per sample; 10-bit files store two bytes per
sample, little-endian, values 0..1023. Files are headerless, so geometry is
always supplied by the caller.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import FormatError

SUPPORTED_BIT_DEPTHS = (8, 10)


def _dtype_for(bit_depth: int) -> np.dtype:
    if bit_depth not in SUPPORTED_BIT_DEPTHS:
        raise ValueError(f"unsupported bit depth {bit_depth}; expected one of {SUPPORTED_BIT_DEPTHS}")
    return np.dtype(np.uint8) if bit_depth == 8 else np.dtype("<u2")


def max_sample(bit_depth: int) -> int:
    return (1 << bit_depth) - 1


@dataclass(eq=False)
class Plane:
    """One image plane, row-major ``(height, width)`` integer samples."""

    samples: np.ndarray
    bit_depth: int = 8

    def __post_init__(self):
        dtype = _dtype_for(self.bit_depth)
        arr = np.asarray(self.samples)
        if arr.ndim != 2:
            raise ValueError(f"plane samples must be 2-D, got shape {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() > max_sample(self.bit_depth)):
            raise ValueError(
                f"sample values outside [0, {max_sample(self.bit_depth)}] for {self.bit_depth}-bit plane"
            )
        self.samples = np.ascontiguousarray(arr, dtype=dtype)

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    def copy(self) -> "Plane":
        return Plane(self.samples.copy(), self.bit_depth)

    def __eq__(self, other):
        if not isinstance(other, Plane):
            return NotImplemented
        return self.bit_depth == other.bit_depth and np.array_equal(self.samples, other.samples)


@dataclass(eq=False)
class VideoFrame:
    y: Plane
    u: Plane
    v: Plane
    index: int = 0

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("frame index must be >= 0")
        w, h = self.y.width, self.y.height
        if w % 2 or h % 2:
            raise ValueError(f"luma dimensions must be even for 4:2:0, got {w}x{h}")
        for name, plane in (("u", self.u), ("v", self.v)):
            if (plane.width, plane.height) != (w // 2, h // 2):
                raise ValueError(
                    f"{name} plane is {plane.width}x{plane.height}, expected {w // 2}x{h // 2}"
                )
            if plane.bit_depth != self.y.bit_depth:
                raise ValueError("all planes of a frame must share bit depth")

    @property
    def width(self) -> int:
        return self.y.width

    @property
    def height(self) -> int:
        return self.y.height

    @property
    def bit_depth(self) -> int:
        return self.y.bit_depth

    def __eq__(self, other):
        if not isinstance(other, VideoFrame):
            return NotImplemented
        return (self.index == other.index and self.y == other.y
                and self.u == other.u and self.v == other.v)


@dataclass(eq=False)
class Sequence:
    """Ordered frames sharing geometry and bit depth, indexed 0..N-1."""

    frames: List[VideoFrame]
    width: int
    height: int
    bit_depth: int = 8
    frame_rate: float = 30.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        self.frames = list(self.frames)
        for i, f in enumerate(self.frames):
            if f.index != i:
                raise ValueError(f"frame indices must be contiguous from 0; position {i} has index {f.index}")
            if (f.width, f.height, f.bit_depth) != (self.width, self.height, self.bit_depth):
                raise ValueError(
                    f"frame {i} is {f.width}x{f.height}@{f.bit_depth}b, "
                    f"sequence is {self.width}x{self.height}@{self.bit_depth}b"
                )

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, i) -> VideoFrame:
        return self.frames[i]

    def __eq__(self, other):
        if not isinstance(other, Sequence):
            return NotImplemented
        return ((self.width, self.height, self.bit_depth) == (other.width, other.height, other.bit_depth)
                and len(self) == len(other)
                and all(a == b for a, b in zip(self.frames, other.frames)))

    def luma_stack(self) -> np.ndarray:
        """All luma planes as an ``(N, H, W)`` array (a copy)."""
        return np.stack([f.y.samples for f in self.frames])

    def with_luma(self, luma: np.ndarray) -> "Sequence":
        """New sequence with luma replaced by ``luma`` and chroma copied."""
        if luma.shape != (len(self), self.height, self.width):
            raise ValueError(f"luma stack shape {luma.shape} does not match sequence")
        frames = [
            VideoFrame(Plane(luma[i], self.bit_depth), f.u.copy(), f.v.copy(), f.index)
            for i, f in enumerate(self.frames)
        ]
        return Sequence(frames, self.width, self.height, self.bit_depth, self.frame_rate, self.name)


def frame_bytes(width: int, height: int, bit_depth: int) -> int:
    return (width * height * 3 // 2) * _dtype_for(bit_depth).itemsize


def read_yuv420(path, width: int, height: int, bit_depth: int = 8,
                max_frames: Optional[int] = None, frame_rate: float = 30.0) -> Sequence:
    """Read a headerless I420 file into a :class:`Sequence`."""
    if width <= 0 or height <= 0:
        raise ValueError(f"invalid geometry {width}x{height}")
    if width % 2 or height % 2:
        raise FormatError(f"odd dimensions {width}x{height} are not valid for 4:2:0")
    dtype = _dtype_for(bit_depth)
    per_frame = frame_bytes(width, height, bit_depth)
    size = os.path.getsize(path)
    if size % per_frame:
        deficit = per_frame - size % per_frame
        raise FormatError(
            f"{path}: size {size} bytes is not a multiple of the {per_frame}-byte frame "
            f"({width}x{height}, {bit_depth}-bit); last frame is short by {deficit} bytes"
        )
    n = size // per_frame
    if max_frames is not None:
        n = min(n, max_frames)
    raw = np.fromfile(path, dtype=dtype, count=n * per_frame // dtype.itemsize)
    if raw.size and raw.max() > max_sample(bit_depth):
        raise FormatError(f"{path}: sample value {int(raw.max())} exceeds {bit_depth}-bit range")

    ys, cs = width * height, (width // 2) * (height // 2)
    frames = []
    for i, buf in enumerate(raw.reshape(n, -1) if n else []):
        y = buf[:ys].reshape(height, width)
        u = buf[ys:ys + cs].reshape(height // 2, width // 2)
        v = buf[ys + cs:].reshape(height // 2, width // 2)
        frames.append(VideoFrame(Plane(y.copy(), bit_depth), Plane(u.copy(), bit_depth),
                                 Plane(v.copy(), bit_depth), i))
    name = os.path.splitext(os.path.basename(str(path)))[0]
    return Sequence(frames, width, height, bit_depth, frame_rate, name)


def write_yuv420(seq: Sequence, path) -> None:
    if len(seq) == 0:
        raise ValueError("cannot write an empty sequence")
    dtype = _dtype_for(seq.bit_depth)
    with open(path, "wb") as fh:
        for f in seq.frames:
            for plane in (f.y, f.u, f.v):
                fh.write(plane.samples.astype(dtype, copy=False).tobytes())


def extract_luma(frame: VideoFrame) -> Plane:
    """Return a copy of the Y plane; callers may mutate it freely."""
    return frame.y.copy()


def sequence_from_planes(luma: np.ndarray, chroma_u: np.ndarray, chroma_v: np.ndarray,
                         bit_depth: int = 8, frame_rate: float = 30.0, name: str = "") -> Sequence:
    """Build a sequence from ``(N,H,W)`` luma and ``(N,H/2,W/2)`` chroma stacks."""
    n, h, w = luma.shape
    frames = [
        VideoFrame(Plane(luma[i], bit_depth), Plane(chroma_u[i], bit_depth),
                   Plane(chroma_v[i], bit_depth), i)
        for i in range(n)
    ]
    return Sequence(frames, w, h, bit_depth, frame_rate, name)
