import numpy as np
import pytest

from vqe.errors import DataError, ShapeError
from vqe.frames import LumaFrame
from vqe.metrics import PSNR_CAP, delta_psnr, eval_sequence, mse, psnr


def frame(value, shape=(16, 16)):
    return LumaFrame(np.full(shape, value, dtype=np.uint8))


def test_uniform_one_level_error():
    assert psnr(frame(100), frame(101)) == pytest.approx(48.1308, abs=1e-3)


def test_identical_frames_hit_the_cap():
    assert psnr(frame(7), frame(7)) == PSNR_CAP


def test_mse_is_symmetric_and_checks_dims():
    rng = np.random.default_rng(0)
    a = LumaFrame(rng.integers(0, 256, size=(8, 8), dtype=np.uint8))
    b = LumaFrame(rng.integers(0, 256, size=(8, 8), dtype=np.uint8))
    assert mse(a, b) == mse(b, a)
    with pytest.raises(ShapeError):
        mse(a, frame(0, (8, 9)))


def test_delta_psnr_per_frame():
    raw = [frame(100), frame(50)]
    compressed = [frame(102), frame(52)]
    enhanced = [frame(101), frame(50)]
    deltas, mean = delta_psnr(raw, compressed, enhanced)
    assert deltas[0] == pytest.approx(20 * np.log10(2))
    assert deltas[1] == pytest.approx(PSNR_CAP - psnr(frame(52), frame(50)))
    assert mean == pytest.approx(np.mean(deltas))


def test_report_recomputes_from_frames(tmp_path):
    rng = np.random.default_rng(1)
    raw = [LumaFrame(rng.integers(0, 256, size=(8, 8), dtype=np.uint8)) for _ in range(3)]
    noisy = [LumaFrame.from_float(r.as_float() + rng.normal(0, 4, size=(8, 8))) for r in raw]
    report = eval_sequence(raw, noisy, raw, sequence="clip", qp="37", start_index=10, timings_ms=[1.0, 2.0, 3.0])
    assert [f.index for f in report.frames] == [10, 11, 12]
    assert report.mean_delta_psnr == pytest.approx(np.mean([PSNR_CAP - psnr(n, r) for r, n in zip(raw, noisy)]))

    path = tmp_path / "eval.csv"
    report.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "frame,psnr_compressed,psnr_enhanced,delta_psnr,ms"
    assert lines[-2].startswith("mean,") and lines[-1].startswith("std,")
    assert float(lines[1].split(",")[1]) == report.frames[0].psnr_compressed


def test_misaligned_sequences_are_rejected():
    with pytest.raises(DataError, match="misaligned"):
        delta_psnr([frame(0)], [frame(0), frame(1)], [frame(0)])
