import os
import stat
import sys
import textwrap

import numpy as np
import pytest

from ovqe_vvc.codec import (CodecSpec, dct8_forward, dct8_inverse, dequantize, encode_decode,
                            mock_code_plane, mock_encode_decode, qstep, quantize)
from ovqe_vvc.errors import CodecError, IntegrityError
from ovqe_vvc.frame_io import Plane, sequence_from_planes
from ovqe_vvc.metrics import sequence_psnr
from ovqe_vvc.synthetic import moving_texture_clip


def dct_by_summation(block):
    """Direct orthonormal DCT-II double sum, independent of the matrix form."""
    n = 8
    out = np.zeros((n, n))
    for u in range(n):
        for v in range(n):
            cu = np.sqrt(1 / n) if u == 0 else np.sqrt(2 / n)
            cv = np.sqrt(1 / n) if v == 0 else np.sqrt(2 / n)
            s = 0.0
            for x in range(n):
                for y in range(n):
                    s += block[x, y] * np.cos((2 * x + 1) * u * np.pi / 16) * np.cos((2 * y + 1) * v * np.pi / 16)
            out[u, v] = cu * cv * s
    return out


def test_dct_zero_block():
    assert not dct8_forward(np.zeros((8, 8))).any()


@pytest.mark.parametrize("value", [0.0, 1.0, -3.5, 200.0])
def test_dct_constant_block(value):
    c = dct8_forward(np.full((8, 8), value))
    assert c[0, 0] == pytest.approx(8 * value, abs=1e-9)
    ac = c.copy()
    ac[0, 0] = 0
    assert np.abs(ac).max() < 1e-9
    np.testing.assert_allclose(c, dct_by_summation(np.full((8, 8), value)), atol=1e-9)


def test_dct_matches_summation_on_random_block():
    b = np.random.default_rng(0).uniform(-128, 127, (8, 8))
    np.testing.assert_allclose(dct8_forward(b), dct_by_summation(b), atol=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_dct_round_trip(seed):
    b = np.random.default_rng(seed).uniform(-512, 512, (8, 8))
    assert np.abs(dct8_inverse(dct8_forward(b)) - b).max() < 1e-9


def test_dct_wrong_shape():
    with pytest.raises(ValueError):
        dct8_forward(np.zeros((4, 8)))
    with pytest.raises(ValueError):
        dct8_inverse(np.zeros((8,)))


def test_qstep_convention():
    assert qstep(4) == 1.0
    assert qstep(10) == 2.0
    assert qstep(37) == pytest.approx(2 ** (33 / 6))


@pytest.mark.parametrize("value", [0, 17, 128, 255])
@pytest.mark.parametrize("qp", [0, 22, 37, 51])
def test_constant_plane_survives(value, qp):
    plane = Plane(np.full((16, 16), value, np.uint8))
    rec, _ = mock_code_plane(plane, qp)
    # DC quantization error <= step/2, spread over 64 samples by the orthonormal IDCT
    bound = qstep(qp) / 2 / 8 + 0.5
    assert np.abs(rec.samples.astype(float) - value).max() <= bound
    assert len(np.unique(rec.samples)) == 1


def test_step_one_quantizer_is_rounding():
    c = np.random.default_rng(2).uniform(-50, 50, (8, 8))
    err = dequantize(quantize(c, qstep(4)), qstep(4)) - c
    assert np.abs(err).max() <= 0.5


def test_quantizer_error_bound_grows_with_step():
    c = np.random.default_rng(3).uniform(-500, 500, (1000,))
    for qp in range(0, 52, 3):
        s = qstep(qp)
        assert np.abs(dequantize(quantize(c, s), s) - c).max() <= s / 2 + 1e-12


def test_nonzero_count_nonincreasing_in_qp():
    block = dct8_forward(np.random.default_rng(4).uniform(-128, 127, (8, 8)))
    counts = [np.count_nonzero(quantize(block, qstep(qp))) for qp in range(52)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    assert counts[0] > counts[-1]


def test_qp_zero_is_near_lossless():
    raw = moving_texture_clip(frames=2, width=32, height=32)
    res = mock_encode_decode(raw, 0)
    assert sequence_psnr(res.decoded, raw).average > 50


def test_psnr_monotone_in_qp():
    raw = moving_texture_clip(frames=3, width=32, height=32)
    p32 = sequence_psnr(mock_encode_decode(raw, 32).decoded, raw).average
    p47 = sequence_psnr(mock_encode_decode(raw, 47).decoded, raw).average
    assert p47 <= p32


def test_mock_is_deterministic_and_shape_preserving():
    raw = moving_texture_clip(frames=3, width=24, height=40)
    a, b = mock_encode_decode(raw, 37), mock_encode_decode(raw, 37)
    assert a.decoded == b.decoded and a.bitstream_bytes == b.bitstream_bytes
    assert len(a.decoded) == 3 and (a.decoded.width, a.decoded.height) == (24, 40)
    assert a.decoded[0].u.samples.shape == (20, 12)


def test_bitrate_formula():
    raw = moving_texture_clip(frames=4, width=16, height=16, frame_rate=25.0)
    res = mock_encode_decode(raw, 30)
    assert res.bitrate_kbps == pytest.approx(res.bitstream_bytes * 8 * 25.0 / (1000 * 4))


def test_chroma_is_coded_too():
    raw = moving_texture_clip(frames=1, width=32, height=32)
    res = mock_encode_decode(raw, 47)
    assert res.decoded[0].u != raw[0].u


@pytest.mark.parametrize("qp", [-1, 52, 3.5])
def test_mock_qp_range(qp):
    raw = moving_texture_clip(frames=1, width=16, height=16)
    with pytest.raises(ValueError):
        mock_encode_decode(raw, qp)


def test_spec_qp_ranges():
    CodecSpec(kind="external", qp=63, encoder_path="x", decoder_path="y")
    with pytest.raises(ValueError):
        CodecSpec(kind="mock", qp=55)
    with pytest.raises(ValueError):
        CodecSpec(kind="external", qp=64)
    with pytest.raises(ValueError):
        CodecSpec(kind="hevc")


def test_ten_bit_mock():
    raw = moving_texture_clip(frames=1, width=16, height=16, bit_depth=10)
    res = mock_encode_decode(raw, 37)
    assert res.decoded.bit_depth == 10
    assert res.decoded[0].y.samples.max() <= 1023


# --- external subprocess path, exercised with stand-in binaries ----------------

FAKE_ENCODER = """\
    import sys, shutil
    args = sys.argv[1:]
    src, dst = args[args.index("-i") + 1], args[args.index("-o") + 1]
    if "--fail" in args:
        print("encoder exploded", file=sys.stderr)
        sys.exit(7)
    shutil.copyfile(src, dst)
"""

FAKE_DECODER = """\
    import sys, shutil
    args = sys.argv[1:]
    src, dst = args[args.index("-b") + 1], args[args.index("-o") + 1]
    data = open(src, "rb").read()
    drop = int(args[args.index("--drop") + 1]) if "--drop" in args else 0
    open(dst, "wb").write(data[: len(data) - drop])
"""


def make_tool(directory, name, body):
    path = directory / name
    path.write_text(f"#!{sys.executable}\n" + textwrap.dedent(body))
    path.chmod(path.stat().st_mode | stat.S_IEXEC)
    return str(path)


@pytest.fixture
def fake_codec(tmp_path):
    tools = tmp_path / "bin"
    tools.mkdir()
    return make_tool(tools, "fakeenc", FAKE_ENCODER), make_tool(tools, "fakedec", FAKE_DECODER)


def test_external_round_trip(tmp_path, fake_codec):
    enc, dec = fake_codec
    raw = moving_texture_clip(frames=3, width=16, height=16, frame_rate=30.0)
    work = tmp_path / "work"
    spec = CodecSpec(kind="external", qp=37, encoder_path=enc, decoder_path=dec)
    res = encode_decode(raw, spec, work)
    assert res.decoded == raw
    # the stand-in "bitstream" is the raw file: 3 frames * 384 bytes
    assert res.bitstream_bytes == 3 * 384
    assert res.bitrate_kbps == pytest.approx(3 * 384 * 8 * 30 / (1000 * 3))
    assert os.listdir(work) == []


def test_external_keep_temp(tmp_path, fake_codec):
    enc, dec = fake_codec
    raw = moving_texture_clip(frames=1, width=16, height=16)
    spec = CodecSpec(kind="external", qp=32, encoder_path=enc, decoder_path=dec, keep_temp=True)
    encode_decode(raw, spec, tmp_path / "w")
    (kept,) = os.listdir(tmp_path / "w")
    assert sorted(os.listdir(tmp_path / "w" / kept)) == ["input.yuv", "recon.yuv", "stream.266"]


def test_external_env_defaults(monkeypatch, fake_codec):
    enc, dec = fake_codec
    monkeypatch.setenv("OVQE_ENCODER", enc)
    monkeypatch.setenv("OVQE_DECODER", dec)
    spec = CodecSpec(kind="external")
    assert (spec.encoder_path, spec.decoder_path) == (enc, dec)


def test_external_failure_carries_output(tmp_path, fake_codec):
    enc, dec = fake_codec
    raw = moving_texture_clip(frames=1, width=16, height=16)
    spec = CodecSpec(kind="external", encoder_path=enc, decoder_path=dec, extra_flags=["--fail"])
    with pytest.raises(CodecError) as info:
        encode_decode(raw, spec, tmp_path / "w")
    assert "exploded" in info.value.output
    assert os.listdir(tmp_path / "w") == []


def test_external_frame_count_mismatch(tmp_path, fake_codec):
    enc, dec = fake_codec
    raw = moving_texture_clip(frames=2, width=16, height=16)
    spec = CodecSpec(kind="external", encoder_path=enc, decoder_path=dec,
                     decoder_template="{decoder} -b {bitstream} -o {recon} --drop 384")
    with pytest.raises(IntegrityError):
        encode_decode(raw, spec, tmp_path / "w")


def test_external_missing_binary_leaves_nothing(tmp_path):
    raw = moving_texture_clip(frames=1, width=16, height=16)
    spec = CodecSpec(kind="external", encoder_path=str(tmp_path / "no-such-encoder"),
                     decoder_path=str(tmp_path / "no-such-decoder"))
    work = tmp_path / "w"
    with pytest.raises(CodecError):
        encode_decode(raw, spec, work)
    assert not work.exists() or os.listdir(work) == []


def test_encode_decode_mock_dispatch():
    raw = moving_texture_clip(frames=2, width=16, height=16)
    a = encode_decode(raw, CodecSpec(qp=40))
    assert a.decoded == mock_encode_decode(raw, 40).decoded


def test_encode_decode_empty():
    seq = sequence_from_planes(np.zeros((0, 2, 2), np.uint8), np.zeros((0, 1, 1), np.uint8),
                               np.zeros((0, 1, 1), np.uint8))
    with pytest.raises(ValueError):
        encode_decode(seq, CodecSpec())
