import logging
from typing import Sequence

import numpy as np

from .errors import DataError
from .frames import LumaFrame, require_same_dims
from .schemas import EvalReport, FrameEval

logger = logging.getLogger("vqe.metrics")

PSNR_CAP = 99.0


def mse(a: LumaFrame, b: LumaFrame) -> float:
    require_same_dims(a.samples, b.samples, "mse")
    diff = a.samples.astype(np.float64) - b.samples.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(a: LumaFrame, b: LumaFrame, peak: float = 255.0) -> float:
    """10·log10(peak² / MSE); identical frames report PSNR_CAP."""
    err = mse(a, b)
    if err == 0:
        return PSNR_CAP
    return float(10.0 * np.log10(peak * peak / err))


def _check_aligned(*sequences: Sequence) -> None:
    lengths = {len(s) for s in sequences}
    if len(lengths) != 1:
        raise DataError(f"sequences are misaligned, lengths {[len(s) for s in sequences]}")


def delta_psnr(raw: Sequence, compressed: Sequence, enhanced: Sequence) -> tuple[list, float]:
    """Per-frame PSNR(enhanced) - PSNR(compressed) against raw, and the mean."""
    _check_aligned(raw, compressed, enhanced)
    deltas = [psnr(e, r) - psnr(c, r) for r, c, e in zip(raw, compressed, enhanced)]
    return deltas, float(np.mean(deltas)) if deltas else 0.0


def eval_sequence(raw: Sequence, compressed: Sequence, enhanced: Sequence, sequence: str = "sequence",
                  qp: str | None = None, start_index: int = 0, timings_ms: Sequence | None = None) -> EvalReport:
    _check_aligned(raw, compressed, enhanced)
    frames = []
    for offset, (r, c, e) in enumerate(zip(raw, compressed, enhanced)):
        pc, pe = psnr(c, r), psnr(e, r)
        ms = None if timings_ms is None else float(timings_ms[offset])
        frames.append(FrameEval(index=start_index + offset, psnr_compressed=pc, psnr_enhanced=pe,
                                delta_psnr=pe - pc, ms=ms))
    report = EvalReport(sequence=sequence, qp=qp, frames=frames)
    logger.info(f"{sequence} QP {qp}: {len(frames)} frames, mean ΔPSNR {report.mean_delta_psnr:.4f} dB")
    return report
