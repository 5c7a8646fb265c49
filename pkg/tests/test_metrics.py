import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ovqe_vvc.codec import CodecSpec
from ovqe_vvc.errors import OverlapError, PairingError
from ovqe_vvc.frame_io import Plane
from ovqe_vvc.metrics import (INF_PSNR, PsnrReport, RDPoint, bd_rate, delta_psnr, fit_log_rate,
                              mean_psnr, psnr, rd_sweep, sequence_psnr, write_bdrate_csv)
from ovqe_vvc.synthetic import moving_texture_clip


def plane(a, bd=8):
    return Plane(np.asarray(a), bd)


def test_identical_planes_infinite():
    a = plane(np.full((4, 4), 9))
    assert psnr(a, a) == INF_PSNR == math.inf


def test_mse_one_closed_form():
    a = plane(np.full((8, 8), 100))
    b = plane(np.full((8, 8), 101))
    assert psnr(a, b) == pytest.approx(20 * math.log10(255), abs=1e-12)
    assert psnr(a, b) == pytest.approx(48.1308, abs=1e-4)


def test_ten_bit_peak():
    a = plane(np.full((2, 2), 500), 10)
    b = plane(np.full((2, 2), 502), 10)
    assert psnr(a, b) == pytest.approx(10 * math.log10(1023 ** 2 / 4))


def test_geometry_mismatch():
    with pytest.raises(ValueError):
        psnr(plane(np.zeros((2, 2))), plane(np.zeros((2, 4))))
    with pytest.raises(ValueError):
        psnr(plane(np.zeros((2, 2)), 8), plane(np.zeros((2, 2)), 10))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), shift=st.integers(-20, 20))
def test_psnr_symmetry_and_translation(seed, shift):
    rng = np.random.default_rng(seed)
    a = rng.integers(30, 220, (6, 6))
    b = rng.integers(30, 220, (6, 6))
    assert psnr(plane(a), plane(b)) == psnr(plane(b), plane(a))
    assert psnr(plane(a + shift), plane(b + shift)) == pytest.approx(psnr(plane(a), plane(b)))


def test_psnr_strictly_decreasing_in_mse():
    a = np.full((4, 4), 100)
    values = [psnr(plane(a), plane(a + d)) for d in (1, 2, 3, 5, 8)]
    assert all(x > y for x, y in zip(values, values[1:]))


def test_mean_psnr_excludes_infinite_with_warning():
    with pytest.warns(RuntimeWarning):
        assert mean_psnr([30.0, math.inf, 40.0]) == 35.0
    assert mean_psnr([30.0, 32.0]) == 31.0


def test_report_average_is_mean():
    vals = list(np.random.default_rng(0).uniform(25, 45, 17))
    r = PsnrReport.from_values(vals)
    assert abs(r.average - sum(vals) / len(vals)) < 1e-9


def test_delta_identity_enhancement_is_zero():
    raw = moving_texture_clip(frames=4, width=16, height=16)
    dec = moving_texture_clip(frames=4, width=16, height=16, seed=1)
    rep = delta_psnr(dec, dec, raw)
    assert rep.per_frame_delta == [0.0] * 4
    assert rep.average_delta == 0.0


def test_delta_values():
    raw = moving_texture_clip(frames=2, width=16, height=16)
    y = raw.luma_stack().astype(int)
    worse = raw.with_luma(np.clip(y + 2, 0, 255).astype(np.uint8))
    better = raw.with_luma(np.clip(y + 1, 0, 255).astype(np.uint8))
    rep = delta_psnr(better, worse, raw)
    expected = [psnr(b.y, r.y) - psnr(w.y, r.y) for b, w, r in zip(better, worse, raw)]
    np.testing.assert_allclose(rep.per_frame_delta, expected)
    assert rep.average_delta == pytest.approx(rep.enhanced.average - rep.baseline.average)
    assert rep.average_delta > 5


def test_delta_pairing_error():
    a = moving_texture_clip(frames=2, width=16, height=16)
    b = moving_texture_clip(frames=3, width=16, height=16)
    with pytest.raises(PairingError):
        delta_psnr(a, a, b)
    with pytest.raises(PairingError):
        sequence_psnr(a, b)


# --- BD-rate -------------------------------------------------------------------

ANCHOR = [RDPoint(r, q) for r, q in [(100.0, 30.1), (180.0, 32.4), (330.0, 34.9), (610.0, 37.2)]]


def numeric_bd_rate(anchor, test, samples=200001):
    """Independent oracle: trapezoid integration of the fitted log-rate curves."""
    pa, pt = fit_log_rate(anchor), fit_log_rate(test)
    lo = max(min(p.psnr_db for p in anchor), min(p.psnr_db for p in test))
    hi = min(max(p.psnr_db for p in anchor), max(p.psnr_db for p in test))
    q = np.linspace(lo, hi, samples)
    diff = np.polyval(pt, q) - np.polyval(pa, q)
    avg = np.sum((diff[1:] + diff[:-1]) / 2 * np.diff(q)) / (hi - lo)
    return (10 ** avg - 1) * 100


def test_bd_rate_identical_is_zero():
    assert bd_rate(ANCHOR, ANCHOR) == 0.0


@pytest.mark.parametrize("k", [0.8, 0.5, 1.25])
def test_bd_rate_uniform_scaling(k):
    test = [RDPoint(p.bitrate_kbps * k, p.psnr_db) for p in ANCHOR]
    assert bd_rate(ANCHOR, test) == pytest.approx((k - 1) * 100, abs=1e-6)


def test_bd_rate_matches_numeric_oracle():
    test = [RDPoint(r, q) for r, q in [(90.0, 30.6), (160.0, 32.8), (300.0, 35.3), (560.0, 37.5)]]
    assert bd_rate(ANCHOR, test) == pytest.approx(numeric_bd_rate(ANCHOR, test), abs=1e-6)
    assert bd_rate(ANCHOR, test) < 0


def test_bd_rate_order_independent():
    test = [RDPoint(p.bitrate_kbps * 0.9, p.psnr_db + 0.1) for p in ANCHOR]
    assert bd_rate(ANCHOR[::-1], test[::-1]) == pytest.approx(bd_rate(ANCHOR, test), abs=1e-12)


def test_bd_rate_needs_four_points():
    with pytest.raises(ValueError):
        bd_rate(ANCHOR[:3], ANCHOR)


def test_bd_rate_rejects_non_monotone():
    bad = [RDPoint(100, 30), RDPoint(200, 33), RDPoint(300, 32), RDPoint(400, 35)]
    with pytest.raises(ValueError, match="strictly increasing"):
        bd_rate(ANCHOR, bad)


def test_bd_rate_no_overlap():
    far = [RDPoint(p.bitrate_kbps, p.psnr_db + 20) for p in ANCHOR]
    with pytest.raises(OverlapError):
        bd_rate(ANCHOR, far)


def test_rd_point_rejects_nonpositive_rate():
    with pytest.raises(ValueError):
        RDPoint(0.0, 30.0)


def test_bdrate_csv(tmp_path):
    p = tmp_path / "bd.csv"
    write_bdrate_csv([("clip", "baseline", "enhanced", -12.5)], p)
    assert p.read_text().splitlines() == ["sequence,anchor,test,bd_rate_percent",
                                          "clip,baseline,enhanced,-12.500000"]


# --- sweeps --------------------------------------------------------------------

def test_sweep_without_enhancer():
    raw = moving_texture_clip(frames=3, width=32, height=32)
    sw = rd_sweep(raw, [32, 37, 42, 47], CodecSpec())
    assert len(sw.baseline) == len(sw.enhanced) == 4
    assert sw.baseline == sw.enhanced
    rates = [p.bitrate_kbps for p in sw.baseline]
    quals = [p.psnr_db for p in sw.baseline]
    assert all(a > b for a, b in zip(rates, rates[1:]))
    assert all(a > b for a, b in zip(quals, quals[1:]))
    assert bd_rate(sw.baseline, sw.enhanced) == 0.0


def test_sweep_with_enhancer_callback():
    raw = moving_texture_clip(frames=2, width=16, height=16)
    seen = []
    sw = rd_sweep(raw, [37, 42], CodecSpec(), enhancer=lambda s: raw,
                  on_entry=lambda e, d, x: seen.append(e.qp))
    assert seen == [37, 42]
    assert all(e.enhanced.psnr_db == math.inf or e.enhanced.psnr_db > e.baseline.psnr_db
               for e in sw.entries)


def test_sweep_empty_qps():
    raw = moving_texture_clip(frames=1, width=16, height=16)
    with pytest.raises(ValueError):
        rd_sweep(raw, [], CodecSpec())
