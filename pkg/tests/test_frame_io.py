import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ovqe_vvc.errors import FormatError
from ovqe_vvc.frame_io import (Plane, Sequence, VideoFrame, extract_luma, frame_bytes,
                               read_yuv420, sequence_from_planes, write_yuv420)


def random_file(path, w, h, n, bit_depth, seed=0):
    rng = np.random.default_rng(seed)
    count = n * w * h * 3 // 2
    if bit_depth == 8:
        data = rng.integers(0, 256, count, dtype=np.uint8).tobytes()
    else:
        data = rng.integers(0, 1024, count).astype("<u2").tobytes()
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def test_frame_count_from_size(tmp_path):
    p = tmp_path / "a.yuv"
    p.write_bytes(bytes(6144 * 3))
    seq = read_yuv420(p, 64, 64)
    assert len(seq) == 3
    assert (seq.width, seq.height) == (64, 64)
    assert [f.index for f in seq] == [0, 1, 2]


def test_all_zero_frame(tmp_path):
    p = tmp_path / "z.yuv"
    p.write_bytes(bytes(frame_bytes(16, 8, 8)))
    (f,) = read_yuv420(p, 16, 8).frames
    for plane in (f.y, f.u, f.v):
        assert not plane.samples.any()
    assert (f.u.width, f.u.height) == (8, 4)


def test_max_frames(tmp_path):
    p = tmp_path / "a.yuv"
    random_file(p, 8, 8, 5, 8)
    assert len(read_yuv420(p, 8, 8, max_frames=2)) == 2
    assert len(read_yuv420(p, 8, 8, max_frames=50)) == 5


@pytest.mark.parametrize("bit_depth", [8, 10])
@pytest.mark.parametrize("seed", range(4))
def test_read_write_byte_exact(tmp_path, bit_depth, seed):
    src, dst = tmp_path / "src.yuv", tmp_path / "dst.yuv"
    data = random_file(src, 16, 12, 3, bit_depth, seed)
    write_yuv420(read_yuv420(src, 16, 12, bit_depth), dst)
    assert dst.read_bytes() == data


def test_ten_bit_little_endian(tmp_path):
    p = tmp_path / "a.yuv"
    samples = np.zeros(2 * 2 * 3 // 2, dtype="<u2")
    samples[0] = 0x0302
    p.write_bytes(samples.tobytes())
    seq = read_yuv420(p, 2, 2, bit_depth=10)
    assert seq[0].y.samples[0, 0] == 0x0302
    assert p.read_bytes()[:2] == b"\x02\x03"


def test_ten_bit_out_of_range_rejected(tmp_path):
    p = tmp_path / "a.yuv"
    p.write_bytes(np.full(6, 1024, dtype="<u2").tobytes())
    with pytest.raises(FormatError):
        read_yuv420(p, 2, 2, bit_depth=10)


def test_truncated_file_names_deficit(tmp_path):
    p = tmp_path / "t.yuv"
    p.write_bytes(bytes(6144 + 100))
    with pytest.raises(FormatError, match="6044 bytes"):
        read_yuv420(p, 64, 64)


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        read_yuv420(tmp_path / "nope.yuv", 8, 8)


def test_odd_dimensions_rejected(tmp_path):
    p = tmp_path / "a.yuv"
    p.write_bytes(bytes(100))
    with pytest.raises(FormatError):
        read_yuv420(p, 5, 4)


def test_two_by_two_writes_six_bytes(tmp_path):
    seq = sequence_from_planes(np.full((1, 2, 2), 7, np.uint8), np.full((1, 1, 1), 1, np.uint8),
                               np.full((1, 1, 1), 2, np.uint8))
    p = tmp_path / "o.yuv"
    write_yuv420(seq, p)
    assert p.read_bytes() == bytes([7, 7, 7, 7, 1, 2])


def test_write_then_read_equals_input(tmp_path):
    rng = np.random.default_rng(1)
    seq = sequence_from_planes(rng.integers(0, 256, (2, 4, 6), dtype=np.uint8),
                               rng.integers(0, 256, (2, 2, 3), dtype=np.uint8),
                               rng.integers(0, 256, (2, 2, 3), dtype=np.uint8))
    p = tmp_path / "o.yuv"
    write_yuv420(seq, p)
    assert read_yuv420(p, 6, 4) == seq


def test_empty_sequence_write_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_yuv420(Sequence([], 4, 4), tmp_path / "o.yuv")
    assert not os.path.exists(tmp_path / "o.yuv")


def test_unwritable_path(tmp_path):
    seq = sequence_from_planes(np.zeros((1, 2, 2), np.uint8), np.zeros((1, 1, 1), np.uint8),
                               np.zeros((1, 1, 1), np.uint8))
    with pytest.raises(OSError):
        write_yuv420(seq, tmp_path / "missing" / "o.yuv")


def test_extract_luma_is_a_copy():
    frame = VideoFrame(Plane(np.full((4, 4), 128, np.uint8)), Plane(np.zeros((2, 2), np.uint8)),
                       Plane(np.zeros((2, 2), np.uint8)))
    y = extract_luma(frame)
    assert (y.width, y.height) == (4, 4)
    assert np.all(y.samples == 128)
    y.samples[0, 0] = 3
    assert frame.y.samples[0, 0] == 128


def test_plane_range_invariant():
    with pytest.raises(ValueError):
        Plane(np.array([[256]]), 8)
    with pytest.raises(ValueError):
        Plane(np.array([[-1]]), 8)
    Plane(np.array([[1023]]), 10)


def test_frame_chroma_geometry_invariant():
    with pytest.raises(ValueError):
        VideoFrame(Plane(np.zeros((4, 4), np.uint8)), Plane(np.zeros((4, 4), np.uint8)),
                   Plane(np.zeros((2, 2), np.uint8)))


def test_sequence_index_invariant():
    f = VideoFrame(Plane(np.zeros((2, 2), np.uint8)), Plane(np.zeros((1, 1), np.uint8)),
                   Plane(np.zeros((1, 1), np.uint8)), index=1)
    with pytest.raises(ValueError):
        Sequence([f], 2, 2)


@settings(max_examples=25, deadline=None)
@given(w=st.integers(1, 6).map(lambda x: 2 * x), h=st.integers(1, 6).map(lambda x: 2 * x),
       n=st.integers(1, 3), ten_bit=st.booleans(), seed=st.integers(0, 2 ** 16))
def test_round_trip_property(tmp_path_factory, w, h, n, ten_bit, seed):
    d = tmp_path_factory.mktemp("rt")
    bd = 10 if ten_bit else 8
    data = random_file(d / "a.yuv", w, h, n, bd, seed)
    seq = read_yuv420(d / "a.yuv", w, h, bd)
    write_yuv420(seq, d / "b.yuv")
    assert (d / "b.yuv").read_bytes() == data
    assert read_yuv420(d / "b.yuv", w, h, bd) == seq
