"""Deterministic synthetic test clips."""

import numpy as np
from scipy import ndimage

from .frame_io import Sequence, sequence_from_planes


def _texture(rng, size):
    noise = rng.standard_normal((size, size))
    fine = ndimage.gaussian_filter(noise, 1.2, mode="wrap")
    coarse = ndimage.gaussian_filter(rng.standard_normal((size, size)), 6.0, mode="wrap")
    tex = 0.6 * fine / fine.std() + 1.0 * coarse / coarse.std()
    yy, xx = np.mgrid[0:size, 0:size]
    # a few hard-edged shapes so the codec has edges to ring on
    for _ in range(6):
        cy, cx = rng.integers(0, size, 2)
        r = rng.integers(size // 16, size // 6)
        level = rng.uniform(-2.0, 2.0)
        if rng.random() < 0.5:
            tex[(np.abs(yy - cy) < r) & (np.abs(xx - cx) < r)] += level
        else:
            tex[(yy - cy) ** 2 + (xx - cx) ** 2 < r * r] += level
    stripes = np.sin(2 * np.pi * (xx * 0.11 + yy * 0.05))
    tex += 0.5 * stripes * (yy > size // 2)
    return tex


def moving_texture_clip(frames: int = 16, width: int = 64, height: int = 64, bit_depth: int = 8,
                        velocity=(0.7, 1.3), frame_rate: float = 30.0, seed: int = 0) -> Sequence:
    """A textured canvas panning with sub-pixel ``(dy, dx)`` velocity per frame."""
    rng = np.random.default_rng(seed)
    size = 2 * max(width, height) + int(np.ceil(frames * max(abs(v) for v in velocity))) + 8
    size += size % 2
    tex = _texture(rng, size)
    lo, hi = np.percentile(tex, [1, 99])
    peak = (1 << bit_depth) - 1
    canvas = np.clip((tex - lo) / (hi - lo), 0, 1) * (0.8 * peak) + 0.1 * peak
    chroma_u = ndimage.gaussian_filter(rng.standard_normal((size, size)), 8.0, mode="wrap")
    chroma_v = ndimage.gaussian_filter(rng.standard_normal((size, size)), 8.0, mode="wrap")
    lumas, us, vs = [], [], []
    for t in range(frames):
        dy, dx = velocity[0] * t, velocity[1] * t
        shifted = ndimage.shift(canvas, (-dy, -dx), order=3, mode="wrap")
        lumas.append(shifted[4:4 + height, 4:4 + width])
        for src, acc in ((chroma_u, us), (chroma_v, vs)):
            c = ndimage.shift(src, (-dy, -dx), order=1, mode="wrap")[4:4 + height:2, 4:4 + width:2]
            acc.append(peak / 2 + c / (np.abs(c).max() + 1e-12) * peak / 8)
    def q(a):
        return np.clip(np.rint(np.stack(a)), 0, peak).astype(np.uint16 if bit_depth > 8 else np.uint8)
    return sequence_from_planes(q(lumas), q(us), q(vs), bit_depth, frame_rate, name=f"texture{seed}")
