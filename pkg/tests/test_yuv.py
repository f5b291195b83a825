import numpy as np
import pytest

from vqe.errors import DataError, ShapeError
from vqe.frames import LumaFrame
from vqe.yuv import (NEUTRAL_CHROMA, YuvSequence, frame_bytes, read_pgm, read_scaled_pgm, read_yuv420, write_pgm,
                     write_scaled_pgm, write_yuv420)


def two_frames():
    rng = np.random.default_rng(0)
    return [LumaFrame(rng.integers(0, 256, size=(16, 16), dtype=np.uint8)) for _ in range(2)]


def test_frame_size():
    assert frame_bytes(16, 16) == 384
    assert frame_bytes(832, 480) == 599040
    with pytest.raises(ShapeError):
        frame_bytes(15, 16)


def test_luma_only_write_uses_neutral_chroma(tmp_path):
    path = tmp_path / "clip.yuv"
    write_yuv420(two_frames(), path)
    blob = path.read_bytes()
    assert len(blob) == 768
    assert set(blob[256:384]) == {NEUTRAL_CHROMA}


def test_round_trip_preserves_luma_and_chroma(tmp_path):
    frames = two_frames()
    chroma = [np.arange(128, dtype=np.uint8), np.arange(128, 256, dtype=np.uint8)]
    path = tmp_path / "clip.yuv"
    write_yuv420(YuvSequence(16, 16, frames, chroma), path)
    seq = read_yuv420(path, 16, 16)
    assert len(seq) == 2
    assert all(a.same_as(b) for a, b in zip(seq.luma, frames))
    assert all(np.array_equal(a, b) for a, b in zip(seq.chroma, chroma))


def test_start_and_count_select_frames(tmp_path):
    frames = two_frames()
    path = tmp_path / "clip.yuv"
    write_yuv420(frames, path)
    seq = read_yuv420(path, 16, 16, start=1, count=5)
    assert len(seq) == 1 and seq.luma[0].same_as(frames[1])
    with pytest.raises(DataError, match="start frame"):
        read_yuv420(path, 16, 16, start=2)


def test_truncated_file_reports_the_shortfall(tmp_path):
    path = tmp_path / "clip.yuv"
    write_yuv420(two_frames(), path)
    path.write_bytes(path.read_bytes()[:700])
    with pytest.raises(DataError, match="expected 768 bytes, short by 68"):
        read_yuv420(path, 16, 16)


def test_with_luma_keeps_chroma():
    seq = YuvSequence(16, 16, two_frames(), [np.zeros(128, dtype=np.uint8)] * 2)
    replaced = seq.with_luma(list(reversed(seq.luma)))
    assert replaced.luma[0] is seq.luma[1] and len(replaced.chroma) == 2
    with pytest.raises(DataError):
        seq.with_luma(seq.luma[:1])


def test_pgm_round_trip(tmp_path):
    image = np.random.default_rng(1).integers(0, 256, size=(9, 13), dtype=np.uint8)
    write_pgm(tmp_path / "map.pgm", image)
    assert np.array_equal(read_pgm(tmp_path / "map.pgm"), image)
    with pytest.raises(ShapeError):
        write_pgm(tmp_path / "bad.pgm", image.astype(np.float32))


def test_scaled_pgm_recovers_values_within_one_step(tmp_path):
    values = np.random.default_rng(2).uniform(-3.0, 5.0, size=(8, 8))
    path = tmp_path / "noise.pgm"
    lo, hi = write_scaled_pgm(path, values)
    assert (tmp_path / "noise.pgm.scale.txt").read_text().startswith("min = ")
    restored = read_scaled_pgm(path)
    assert np.max(np.abs(restored - values)) <= (hi - lo) / 255 / 2 + 1e-12
    assert restored.min() == pytest.approx(lo) and restored.max() == pytest.approx(hi)


def test_constant_map_scales_to_zero(tmp_path):
    path = tmp_path / "flat.pgm"
    write_scaled_pgm(path, np.full((4, 4), 2.5))
    assert np.all(read_pgm(path) == 0)
    assert np.all(read_scaled_pgm(path) == 2.5)


def test_scale_sidecar_needs_numeric_min_and_max(tmp_path):
    path = tmp_path / "depth.pgm"
    write_scaled_pgm(path, np.arange(16.0).reshape(4, 4))
    sidecar = tmp_path / "depth.pgm.scale.txt"
    sidecar.write_text("# stretched depth\nmin = 1.0\nmax = 3.0\n")
    assert read_scaled_pgm(path).max() == pytest.approx(3.0)
    sidecar.write_text("min = 0.0\n")
    with pytest.raises(DataError, match="min and max"):
        read_scaled_pgm(path)
    sidecar.write_text("min = 0.0\nmax = wide\n")
    with pytest.raises(DataError, match="min and max"):
        read_scaled_pgm(path)


@pytest.mark.parametrize("samples", [
    np.array([[0, 300]]),
    np.array([[-1, 4]]),
    np.array([[1.5, 2.0]]),
    np.array([[True, False]]),
])
def test_luma_frames_refuse_samples_that_do_not_fit_eight_bits(samples):
    with pytest.raises(DataError):
        LumaFrame(samples)


def test_luma_frames_accept_integral_values_of_any_numeric_dtype():
    frame = LumaFrame(np.array([[0.0, 255.0], [17.0, 3.0]]))
    assert frame.samples.dtype == np.uint8
    assert frame.samples.tolist() == [[0, 255], [17, 3]]
    with pytest.raises(ShapeError):
        LumaFrame(np.zeros(4, dtype=np.uint8))
