"""PSNR, delta-PSNR, rate-distortion sweeps and Bjontegaard delta rate."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence as Seq

import numpy as np

from .codec import CodecSpec, encode_decode
from .errors import OverlapError, PairingError
from .frame_io import Plane, Sequence, max_sample

log = logging.getLogger(__name__)

INF_PSNR = math.inf


@dataclass(frozen=True)
class RDPoint:
    bitrate_kbps: float
    psnr_db: float

    def __post_init__(self):
        if not self.bitrate_kbps > 0:
            raise ValueError(f"bitrate must be positive, got {self.bitrate_kbps}")


@dataclass
class PsnrReport:
    per_frame: List[float]
    average: float

    @classmethod
    def from_values(cls, values: Iterable[float]) -> "PsnrReport":
        values = [float(v) for v in values]
        return cls(values, mean_psnr(values))


def mean_psnr(values: Seq[float]) -> float:
    """Mean of finite PSNR values; infinite entries are dropped with a warning."""
    finite = [v for v in values if math.isfinite(v)]
    if len(finite) < len(values):
        warnings.warn(f"{len(values) - len(finite)} lossless frame(s) excluded from PSNR average",
                      RuntimeWarning, stacklevel=2)
    if not finite:
        return INF_PSNR if values else math.nan
    return float(np.mean(finite))


def psnr(a: Plane, b: Plane) -> float:
    """Peak signal-to-noise ratio in dB; ``INF_PSNR`` when the planes are equal."""
    if a.samples.shape != b.samples.shape or a.bit_depth != b.bit_depth:
        raise ValueError(
            f"cannot compare {a.width}x{a.height}@{a.bit_depth}b with {b.width}x{b.height}@{b.bit_depth}b"
        )
    diff = a.samples.astype(np.float64) - b.samples.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return INF_PSNR
    peak = float(max_sample(a.bit_depth))
    return 10.0 * math.log10(peak * peak / mse)


def _check_pair(a: Sequence, b: Sequence, what: str):
    if len(a) != len(b):
        raise PairingError(f"{what}: {len(a)} frames vs {len(b)} frames")
    if (a.width, a.height, a.bit_depth) != (b.width, b.height, b.bit_depth):
        raise PairingError(f"{what}: geometry {a.width}x{a.height}@{a.bit_depth}b "
                           f"vs {b.width}x{b.height}@{b.bit_depth}b")


def sequence_psnr(test: Sequence, reference: Sequence) -> PsnrReport:
    _check_pair(test, reference, "psnr")
    return PsnrReport.from_values(psnr(t.y, r.y) for t, r in zip(test, reference))


@dataclass
class DeltaReport:
    baseline: PsnrReport
    enhanced: PsnrReport
    per_frame_delta: List[float]
    average_delta: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "baseline_db", "enhanced_db", "delta_db"])
            for i, (b, e, d) in enumerate(zip(self.baseline.per_frame, self.enhanced.per_frame,
                                              self.per_frame_delta)):
                w.writerow([i, f"{b:.6f}", f"{e:.6f}", f"{d:.6f}"])
            w.writerow(["average", f"{self.baseline.average:.6f}", f"{self.enhanced.average:.6f}",
                        f"{self.average_delta:.6f}"])


def _delta(e: float, b: float) -> float:
    if e == b:
        return 0.0
    return e - b


def delta_psnr(enhanced: Sequence, decoded: Sequence, reference: Sequence) -> DeltaReport:
    """Per-frame and average luma PSNR gain of ``enhanced`` over ``decoded``."""
    _check_pair(enhanced, reference, "enhanced vs reference")
    _check_pair(decoded, reference, "decoded vs reference")
    base = sequence_psnr(decoded, reference)
    enh = sequence_psnr(enhanced, reference)
    deltas = [_delta(e, b) for e, b in zip(enh.per_frame, base.per_frame)]
    finite = [d for d in deltas if math.isfinite(d)]
    avg = float(np.mean(finite)) if finite else 0.0
    return DeltaReport(base, enh, deltas, avg)


def _validated_curve(points: Seq[RDPoint], label: str):
    if len(points) < 4:
        raise ValueError(f"{label} curve needs at least 4 RD points, got {len(points)}")
    pts = sorted(points, key=lambda p: p.bitrate_kbps)
    rate = np.array([p.bitrate_kbps for p in pts], dtype=np.float64)
    q = np.array([p.psnr_db for p in pts], dtype=np.float64)
    if np.any(np.diff(rate) <= 0):
        raise ValueError(f"{label} curve has repeated bitrates")
    if not np.all(np.isfinite(q)):
        raise ValueError(f"{label} curve has non-finite PSNR")
    if np.any(np.diff(q) <= 0):
        raise ValueError(f"{label} curve PSNR is not strictly increasing with bitrate")
    return np.log10(rate), q


def fit_log_rate(points: Seq[RDPoint], label: str = "rd") -> np.ndarray:
    """Cubic coefficients of log10(rate) as a function of PSNR."""
    log_rate, q = _validated_curve(points, label)
    return np.polyfit(q, log_rate, 3)


def bd_rate(anchor: Seq[RDPoint], test: Seq[RDPoint]) -> float:
    """Bjontegaard delta rate of ``test`` against ``anchor`` in percent.

    Negative values mean ``test`` needs less bitrate for the same PSNR.
    """
    la, qa = _validated_curve(anchor, "anchor")
    lt, qt = _validated_curve(test, "test")
    lo, hi = max(qa.min(), qt.min()), min(qa.max(), qt.max())
    if not hi > lo:
        raise OverlapError(f"RD curves do not overlap in PSNR ([{qa.min():.3f}, {qa.max():.3f}] "
                           f"vs [{qt.min():.3f}, {qt.max():.3f}])")
    pa = np.polyint(np.polyfit(qa, la, 3))
    pt = np.polyint(np.polyfit(qt, lt, 3))
    int_a = np.polyval(pa, hi) - np.polyval(pa, lo)
    int_t = np.polyval(pt, hi) - np.polyval(pt, lo)
    return float((10.0 ** ((int_t - int_a) / (hi - lo)) - 1.0) * 100.0)


@dataclass
class SweepEntry:
    qp: int
    baseline: RDPoint
    enhanced: RDPoint
    delta: Optional[DeltaReport] = None


@dataclass
class RDSweep:
    entries: List[SweepEntry] = field(default_factory=list)

    @property
    def baseline(self) -> List[RDPoint]:
        return [e.baseline for e in self.entries]

    @property
    def enhanced(self) -> List[RDPoint]:
        return [e.enhanced for e in self.entries]


def rd_sweep(raw: Sequence, qps: Seq[int], codec: CodecSpec,
             enhancer: Optional[Callable[[Sequence], Sequence]] = None,
             workdir=None, on_entry: Optional[Callable] = None) -> RDSweep:
    """Encode ``raw`` at every QP and measure baseline and enhanced RD points.

    The enhanced chain reuses the baseline bitstream, so both points share a
    bitrate and differ only in PSNR. ``on_entry(entry, decoded, enhanced)``
    is called after each QP, e.g. to write per-QP artifacts.
    """
    if not qps:
        raise ValueError("qp list is empty")
    sweep = RDSweep()
    for qp in qps:
        res = encode_decode(raw, codec.with_qp(qp), workdir)
        base = sequence_psnr(res.decoded, raw).average
        enhanced_seq = enhancer(res.decoded) if enhancer is not None else res.decoded
        report = delta_psnr(enhanced_seq, res.decoded, raw)
        entry = SweepEntry(qp, RDPoint(res.bitrate_kbps, base),
                           RDPoint(res.bitrate_kbps, report.enhanced.average), report)
        log.info("qp %d: %.2f kbps, %.4f dB -> %.4f dB", qp, res.bitrate_kbps, base,
                 report.enhanced.average)
        sweep.entries.append(entry)
        if on_entry is not None:
            on_entry(entry, res.decoded, enhanced_seq)
    return sweep


def write_bdrate_csv(rows: Iterable[tuple], path) -> None:
    """Rows of ``(sequence, anchor, test, bd_rate_percent)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sequence", "anchor", "test", "bd_rate_percent"])
        for seq_name, anchor, test, value in rows:
            w.writerow([seq_name, anchor, test, f"{value:.6f}"])


def write_rd_csv(sweep: RDSweep, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["qp", "bitrate_kbps", "baseline_db", "enhanced_db"])
        for e in sweep.entries:
            w.writerow([e.qp, f"{e.baseline.bitrate_kbps:.6f}", f"{e.baseline.psnr_db:.6f}",
                        f"{e.enhanced.psnr_db:.6f}"])
