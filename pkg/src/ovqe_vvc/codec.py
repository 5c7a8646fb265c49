"""Encode/decode chain: external VVC binaries or an in-process mock codec.

The mock codec quantizes 8x8 DCT blocks with a QP-controlled step so that
tests can produce realistic blocking and high-frequency loss without any
encoder installed.
"""

from __future__ import annotations

import logging
import os
import shlex
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import CodecError, IntegrityError
from .frame_io import Plane, Sequence, VideoFrame, max_sample, read_yuv420, write_yuv420

log = logging.getLogger(__name__)

MOCK_QP_RANGE = (0, 51)
EXTERNAL_QP_RANGE = (0, 63)

# VVenC/VVdeC command lines. The exact preset/GOP used in the original
# experiments is unknown; these defaults are a documented guess.
DEFAULT_ENCODER_TEMPLATE = (
    "{encoder} -i {input} -s {width}x{height} -c {format} --framerate {fps} "
    "-f {frames} -q {qp} --preset faster --internal-bitdepth {bit_depth} -o {bitstream}"
)
DEFAULT_DECODER_TEMPLATE = "{decoder} -b {bitstream} -o {recon} -d {bit_depth}"


def _dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    return m


DCT8 = _dct_matrix(8)


def _check_blocks(block) -> np.ndarray:
    b = np.asarray(block, dtype=np.float64)
    if b.shape[-2:] != (8, 8):
        raise ValueError(f"expected 8x8 block(s), got shape {b.shape}")
    return b


def dct8_forward(block) -> np.ndarray:
    """Orthonormal 2-D DCT-II of one 8x8 block (or a stack ``(..., 8, 8)``)."""
    b = _check_blocks(block)
    return DCT8 @ b @ DCT8.T


def dct8_inverse(coeffs) -> np.ndarray:
    c = _check_blocks(coeffs)
    return DCT8.T @ c @ DCT8


def qstep(qp: float, bit_depth: int = 8) -> float:
    return 2.0 ** ((qp - 4) / 6.0) * (1 << (bit_depth - 8))


def quantize(coeffs: np.ndarray, step: float) -> np.ndarray:
    return np.rint(coeffs / step)


def dequantize(levels: np.ndarray, step: float) -> np.ndarray:
    return levels * step


def _to_blocks(a: np.ndarray) -> np.ndarray:
    h, w = a.shape
    return a.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3)


def _from_blocks(b: np.ndarray) -> np.ndarray:
    nh, nw = b.shape[:2]
    return b.transpose(0, 2, 1, 3).reshape(nh * 8, nw * 8)


def mock_code_plane(plane: Plane, qp: int):
    """Blockwise DCT quantization of one plane; returns (plane, nonzero count)."""
    h, w = plane.height, plane.width
    ph, pw = -h % 8, -w % 8
    offset = 1 << (plane.bit_depth - 1)
    x = plane.samples.astype(np.float64) - offset
    if ph or pw:
        x = np.pad(x, ((0, ph), (0, pw)), mode="edge")
    step = qstep(qp, plane.bit_depth)
    levels = quantize(dct8_forward(_to_blocks(x)), step)
    rec = _from_blocks(dct8_inverse(dequantize(levels, step)))[:h, :w] + offset
    rec = np.clip(np.rint(rec), 0, max_sample(plane.bit_depth))
    return Plane(rec, plane.bit_depth), int(np.count_nonzero(levels))


@dataclass
class CodecResult:
    decoded: Sequence
    bitrate_kbps: float
    bitstream_bytes: int


def bitrate_from_bytes(nbytes: int, frame_rate: float, n_frames: int) -> float:
    return nbytes * 8.0 * frame_rate / (1000.0 * n_frames)


def mock_encode_decode(seq: Sequence, qp: int) -> CodecResult:
    """Run ``seq`` through the mock codec.

    Each plane goes through 8x8 DCT-II, uniform quantization with step
    ``2**((qp-4)/6)`` (scaled by ``2**(bit_depth-8)``), dequantization,
    inverse DCT and clamping. The pseudo-bitstream costs one byte per
    nonzero quantized coefficient.
    """
    lo, hi = MOCK_QP_RANGE
    if not (isinstance(qp, (int, np.integer)) and lo <= qp <= hi):
        raise ValueError(f"mock codec qp must be an integer in [{lo}, {hi}], got {qp!r}")
    if len(seq) == 0:
        raise ValueError("cannot encode an empty sequence")
    frames, nonzero = [], 0
    for f in seq.frames:
        planes = []
        for p in (f.y, f.u, f.v):
            rec, nz = mock_code_plane(p, int(qp))
            planes.append(rec)
            nonzero += nz
        frames.append(VideoFrame(*planes, index=f.index))
    decoded = Sequence(frames, seq.width, seq.height, seq.bit_depth, seq.frame_rate, seq.name)
    return CodecResult(decoded, bitrate_from_bytes(nonzero, seq.frame_rate, len(seq)), nonzero)


@dataclass
class CodecSpec:
    """How to run the encode/decode chain.

    ``kind`` is ``"mock"`` or ``"external"``. External binaries default to the
    ``OVQE_ENCODER`` / ``OVQE_DECODER`` environment variables.
    """

    kind: str = "mock"
    qp: int = 37
    encoder_path: Optional[str] = None
    decoder_path: Optional[str] = None
    extra_flags: List[str] = field(default_factory=list)
    encoder_template: str = DEFAULT_ENCODER_TEMPLATE
    decoder_template: str = DEFAULT_DECODER_TEMPLATE
    keep_temp: bool = False

    def __post_init__(self):
        if self.kind not in ("mock", "external"):
            raise ValueError(f"codec kind must be 'mock' or 'external', got {self.kind!r}")
        if self.kind == "external":
            self.encoder_path = self.encoder_path or os.environ.get("OVQE_ENCODER")
            self.decoder_path = self.decoder_path or os.environ.get("OVQE_DECODER")
        self.check_qp(self.qp)

    def check_qp(self, qp):
        lo, hi = MOCK_QP_RANGE if self.kind == "mock" else EXTERNAL_QP_RANGE
        if not (isinstance(qp, (int, np.integer)) and lo <= qp <= hi):
            raise ValueError(f"{self.kind} codec qp must be an integer in [{lo}, {hi}], got {qp!r}")

    def with_qp(self, qp: int) -> "CodecSpec":
        return CodecSpec(self.kind, qp, self.encoder_path, self.decoder_path, list(self.extra_flags),
                         self.encoder_template, self.decoder_template, self.keep_temp)


def _resolve_binary(path: Optional[str], role: str) -> str:
    if not path:
        raise CodecError(f"no {role} binary configured (set OVQE_{role.upper()} or the config file)")
    found = shutil.which(path)
    if found is None:
        raise CodecError(f"{role} binary not found or not executable: {path}")
    return found


def _run(argv: List[str], role: str) -> str:
    log.debug("running %s: %s", role, shlex.join(argv))
    try:
        proc = subprocess.run(argv, stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)
    except OSError as exc:
        raise CodecError(f"{role} failed to start: {exc}") from exc
    if proc.returncode != 0:
        raise CodecError(f"{role} exited with status {proc.returncode}", proc.stdout)
    return proc.stdout


def _external_encode_decode(seq: Sequence, spec: CodecSpec, workdir) -> CodecResult:
    encoder = _resolve_binary(spec.encoder_path, "encoder")
    decoder = _resolve_binary(spec.decoder_path, "decoder")
    os.makedirs(workdir, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=f"qp{spec.qp}_", dir=workdir)
    try:
        paths = {
            "input": os.path.join(tmp, "input.yuv"),
            "bitstream": os.path.join(tmp, "stream.266"),
            "recon": os.path.join(tmp, "recon.yuv"),
        }
        write_yuv420(seq, paths["input"])
        fields = dict(
            paths, encoder=encoder, decoder=decoder, width=seq.width, height=seq.height,
            fps=f"{seq.frame_rate:g}", frames=len(seq), qp=spec.qp, bit_depth=seq.bit_depth,
            format="yuv420" if seq.bit_depth == 8 else "yuv420_10",
        )
        enc_argv = shlex.split(spec.encoder_template.format(**fields)) + list(spec.extra_flags)
        _run(enc_argv, "encoder")
        _run(shlex.split(spec.decoder_template.format(**fields)), "decoder")
        if not os.path.exists(paths["bitstream"]):
            raise CodecError(f"encoder produced no bitstream at {paths['bitstream']}")
        nbytes = os.path.getsize(paths["bitstream"])
        decoded = read_yuv420(paths["recon"], seq.width, seq.height, seq.bit_depth,
                              frame_rate=seq.frame_rate)
        if len(decoded) != len(seq):
            raise IntegrityError(f"decoder returned {len(decoded)} frames, expected {len(seq)}")
        decoded.name = seq.name
        return CodecResult(decoded, bitrate_from_bytes(nbytes, seq.frame_rate, len(seq)), nbytes)
    finally:
        if not spec.keep_temp:
            shutil.rmtree(tmp, ignore_errors=True)


def encode_decode(seq: Sequence, spec: CodecSpec, workdir=None) -> CodecResult:
    """Compress and reconstruct ``seq`` with the codec described by ``spec``."""
    if len(seq) == 0:
        raise ValueError("cannot encode an empty sequence")
    spec.check_qp(spec.qp)
    if spec.kind == "mock":
        result = mock_encode_decode(seq, spec.qp)
    else:
        result = _external_encode_decode(seq, spec, workdir or tempfile.gettempdir())
    d = result.decoded
    if len(d) != len(seq) or (d.width, d.height) != (seq.width, seq.height):
        raise IntegrityError("decoded sequence geometry differs from input")
    return result
