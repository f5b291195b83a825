"""Boundary filtering experiment on 8×8 block grids.

Every interior 8×8 boundary is cut into 4-sample segments. For each segment
the oracle tries the three filtering modes and keeps the one closest to
the original frame. Vertical boundaries are processed first; the
horizontal pass reads the output of the vertical pass, as in-loop filters
do. Filter taps are the HEVC luma taps without the tc clipping (see
docs/formats.md).
"""

import csv
import logging
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import RdCurveError, ShapeError
from .frames import LumaFrame, require_same_dims
from .metrics import psnr
from .schemas import RdCurve, RdPoint

logger = logging.getLogger("vqe.deblock")

GRID = 8
SEGMENT = 4
# columns of a filtered line: p3 p2 p1 p0 | q0 q1 q2 q3
P3, P2, P1, P0, Q0, Q1, Q2, Q3 = range(8)
# strong filtering touches p2..q2; SSE is compared over the same samples for every mode
MODIFIABLE = slice(P2, Q2 + 1)

# HEVC beta' (QP 0..51) and tc' (Q 0..53) tables, 8-bit video
BETA_TABLE = [0] * 16 + list(range(6, 19)) + list(range(20, 65, 2))
TC_TABLE = ([0] * 18 + [1] * 9 + [2] * 4 + [3] * 4 + [4] * 3 + [5, 5, 6, 6, 7, 8, 9, 10, 11, 13, 14, 16, 18, 20, 22, 24])


class Mode(IntEnum):
    NONE = 0
    NORMAL = 1
    STRONG = 2


@dataclass(frozen=True, eq=False)
class ModeMap:
    """vertical[b, s]: boundary at x = 8(b+1), rows 4s..4s+3;
    horizontal[b, s]: boundary at y = 8(b+1), columns 4s..4s+3."""

    vertical: np.ndarray
    horizontal: np.ndarray

    @property
    def segment_count(self) -> int:
        return self.vertical.size + self.horizontal.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.vertical.ravel(), self.horizontal.ravel()])

    def counts(self) -> dict:
        flat = self.flat()
        return {mode.name.lower(): int(np.sum(flat == mode)) for mode in Mode}


def filter_lines(lines: np.ndarray, mode: Mode) -> np.ndarray:
    """Filter lines of 8 samples (…, 8) across the p0|q0 edge."""
    mode = Mode(mode)
    s = np.asarray(lines, dtype=np.int32)
    if s.shape[-1] != 8:
        raise ShapeError(f"filtered lines hold 8 samples, got {s.shape[-1]}")
    out = s.copy()
    p3, p2, p1, p0, q0, q1, q2, q3 = (s[..., i] for i in range(8))
    if mode == Mode.STRONG:
        out[..., P0] = (p2 + 2 * p1 + 2 * p0 + 2 * q0 + q1 + 4) >> 3
        out[..., P1] = (p2 + p1 + p0 + q0 + 2) >> 2
        out[..., P2] = (2 * p3 + 3 * p2 + p1 + p0 + q0 + 4) >> 3
        out[..., Q0] = (p1 + 2 * p0 + 2 * q0 + 2 * q1 + q2 + 4) >> 3
        out[..., Q1] = (p0 + q0 + q1 + q2 + 2) >> 2
        out[..., Q2] = (p0 + q0 + q1 + 3 * q2 + 2 * q3 + 4) >> 3
    elif mode == Mode.NORMAL:
        delta = (9 * (q0 - p0) - 3 * (q1 - p1) + 8) >> 4
        half = np.sign(delta) * (np.abs(delta) >> 1)
        out[..., P0] = p0 + delta
        out[..., Q0] = q0 - delta
        out[..., P1] = p1 + half
        out[..., Q1] = q1 - half
    return np.clip(out, 0, 255)


def filter_segment(samples: np.ndarray, mode: Mode) -> np.ndarray:
    """Filter one segment: 4 lines × 8 samples."""
    samples = np.asarray(samples)
    if samples.shape != (SEGMENT, 8):
        raise ShapeError(f"a segment is 4 lines of 8 samples, got {samples.shape}")
    return filter_lines(samples, mode).astype(np.uint8)


def _check_grid(frame: LumaFrame) -> None:
    if frame.width % GRID or frame.height % GRID:
        raise ShapeError(f"deblocking needs dimensions that are multiples of {GRID}, got {frame.width}x{frame.height}")


def _boundary_columns(width: int) -> np.ndarray:
    xs = np.arange(GRID, width, GRID)
    return xs[:, None] - 4 + np.arange(8)[None, :]


def _candidates(plane: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All three filter outputs for every vertical-boundary line: (mode, H, B, 8)."""
    idx = _boundary_columns(plane.shape[1])
    lines = plane[:, idx]
    return idx, np.stack([filter_lines(lines, mode) for mode in Mode])


def _segment_sse(candidates: np.ndarray, target: np.ndarray) -> np.ndarray:
    diff = (candidates - target[None].astype(np.int64))[..., MODIFIABLE]
    per_line = np.sum(diff * diff, axis=-1)
    m, h, b = per_line.shape
    return per_line.reshape(m, h // SEGMENT, SEGMENT, b).sum(axis=2)


def _replay(plane: np.ndarray, idx: np.ndarray, candidates: np.ndarray, modes: np.ndarray) -> np.ndarray:
    per_line = np.repeat(modes.T, SEGMENT, axis=0)
    chosen = np.take_along_axis(candidates, per_line[None, :, :, None], axis=0)[0]
    out = plane.copy()
    out[:, idx] = chosen
    return out


def _oracle_vertical(plane: np.ndarray, original: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    idx, cands = _candidates(plane)
    sse = _segment_sse(cands, original[:, idx])
    # argmin keeps the first minimum, which encodes the none > normal > strong tie-break
    modes = np.argmin(sse, axis=0).T.astype(np.uint8)
    return _replay(plane, idx, cands, modes), modes, sse


def oracle_pass(decoded: LumaFrame, original: LumaFrame, orientation: str) -> tuple[LumaFrame, np.ndarray]:
    """One filtering pass (vertical or horizontal boundaries) with per-segment optimal modes."""
    require_same_dims(decoded.samples, original.samples, "oracle_pass")
    _check_grid(decoded)
    plane = decoded.samples.astype(np.int32)
    ref = original.samples.astype(np.int32)
    if orientation == "vertical":
        out, modes, _ = _oracle_vertical(plane, ref)
        return LumaFrame(out.astype(np.uint8)), modes
    if orientation == "horizontal":
        out, modes, _ = _oracle_vertical(plane.T, ref.T)
        return LumaFrame(out.T.astype(np.uint8)), modes
    raise ValueError(f"orientation must be 'vertical' or 'horizontal', got {orientation!r}")


def oracle_decide(decoded: LumaFrame, original: LumaFrame) -> tuple[ModeMap, LumaFrame]:
    """Distortion-optimal mode per segment, vertical pass then horizontal pass.

    A per-segment optimal vertical pass can still lose to a uniform one once
    the horizontal pass has run over it, so each uniform vertical table is
    tried as well. The horizontal pass is always per-segment optimal over
    its input and the greedy vertical table wins ties.
    """
    require_same_dims(decoded.samples, original.samples, "oracle_decide")
    _check_grid(decoded)
    _, greedy = oracle_pass(decoded, original, "vertical")
    untouched = uniform_modes(decoded, Mode.NONE).horizontal
    best = None
    for vertical in [greedy] + [np.full_like(greedy, mode) for mode in Mode]:
        after_vertical = apply_modes(decoded, ModeMap(vertical, untouched))
        filtered, horizontal = oracle_pass(after_vertical, original, "horizontal")
        cost = sse(filtered, original)
        if best is None or cost < best[0]:
            best = (cost, ModeMap(vertical, horizontal), filtered)
    if best[1].vertical is not greedy:
        logger.debug(f"uniform vertical mode {Mode(best[1].vertical.flat[0]).name} beat the greedy pass")
    return best[1], best[2]


def segment_sse_table(decoded: LumaFrame, original: LumaFrame, orientation: str) -> np.ndarray:
    """SSE of every mode for every segment of one pass: (mode, boundary, segment)."""
    require_same_dims(decoded.samples, original.samples, "segment_sse_table")
    _check_grid(decoded)
    plane = decoded.samples.astype(np.int32)
    ref = original.samples.astype(np.int32)
    if orientation == "horizontal":
        plane, ref = plane.T, ref.T
    idx, cands = _candidates(plane)
    return _segment_sse(cands, ref[:, idx]).transpose(0, 2, 1)


def apply_modes(decoded: LumaFrame, mode_map: ModeMap) -> LumaFrame:
    _check_grid(decoded)
    plane = decoded.samples.astype(np.int32)
    for orientation, modes in (("vertical", mode_map.vertical), ("horizontal", mode_map.horizontal)):
        work = plane if orientation == "vertical" else plane.T
        expected = (len(_boundary_columns(work.shape[1])), work.shape[0] // SEGMENT)
        if modes.shape != expected:
            raise ShapeError(f"{orientation} mode table is {modes.shape}, frame needs {expected}")
        idx, cands = _candidates(work)
        work = _replay(work, idx, cands, modes.astype(np.intp))
        plane = work if orientation == "vertical" else work.T
    return LumaFrame(plane.astype(np.uint8))


def uniform_modes(frame: LumaFrame, mode: Mode) -> ModeMap:
    _check_grid(frame)
    nv = (frame.width // GRID - 1, frame.height // SEGMENT)
    nh = (frame.height // GRID - 1, frame.width // SEGMENT)
    return ModeMap(np.full(nv, mode, dtype=np.uint8), np.full(nh, mode, dtype=np.uint8))


# --- baseline decision rule ---

def _rule_vertical(plane: np.ndarray, beta: int, tc: int) -> np.ndarray:
    idx = _boundary_columns(plane.shape[1])
    s = plane[:, idx].astype(np.int32)
    h = s.shape[0]
    seg = s.reshape(h // SEGMENT, SEGMENT, s.shape[1], 8)
    first, last = seg[:, 0], seg[:, SEGMENT - 1]

    def activity(line):
        dp = np.abs(line[..., P2] - 2 * line[..., P1] + line[..., P0])
        dq = np.abs(line[..., Q2] - 2 * line[..., Q1] + line[..., Q0])
        return dp + dq

    def strong_ok(line):
        return ((2 * activity(line) < (beta >> 2))
                & (np.abs(line[..., P3] - line[..., P0]) + np.abs(line[..., Q0] - line[..., Q3]) < (beta >> 3))
                & (np.abs(line[..., P0] - line[..., Q0]) < ((5 * tc + 1) >> 1)))

    d = activity(first) + activity(last)
    modes = np.where(d < beta, Mode.NORMAL, Mode.NONE)
    modes = np.where((d < beta) & strong_ok(first) & strong_ok(last), Mode.STRONG, modes)
    return modes.T.astype(np.uint8)


def hevc_rule_decide(decoded: LumaFrame, qp: int) -> tuple[ModeMap, LumaFrame]:
    """HEVC-style on/off and strong/normal decisions from decoded samples only.

    Uses the intra boundary strength, so tc is looked up at QP + 2.
    """
    _check_grid(decoded)
    beta = BETA_TABLE[int(np.clip(qp, 0, 51))]
    tc = TC_TABLE[int(np.clip(qp + 2, 0, 53))]
    plane = decoded.samples.astype(np.int32)

    vertical = _rule_vertical(plane, beta, tc)
    idx, cands = _candidates(plane)
    plane = _replay(plane, idx, cands, vertical.astype(np.intp))

    work = plane.T
    horizontal = _rule_vertical(work, beta, tc)
    idx, cands = _candidates(work)
    plane = _replay(work, idx, cands, horizontal.astype(np.intp)).T
    return ModeMap(vertical, horizontal), LumaFrame(plane.astype(np.uint8))


def agreement_stats(a: ModeMap, b: ModeMap) -> float:
    """Fraction of segments on which two mode maps agree."""
    if a.vertical.shape != b.vertical.shape or a.horizontal.shape != b.horizontal.shape:
        raise ShapeError(f"mode maps cover different segments ({a.segment_count} vs {b.segment_count})")
    if a.segment_count == 0:
        return 1.0
    return float(np.mean(a.flat() == b.flat()))


def sse(a: LumaFrame, b: LumaFrame) -> int:
    require_same_dims(a.samples, b.samples, "sse")
    diff = a.samples.astype(np.int64) - b.samples.astype(np.int64)
    return int(np.sum(diff * diff))


def write_mode_map_csv(path, mode_map: ModeMap) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["orientation", "boundary", "segment", "mode"])
        for orientation, table in (("vertical", mode_map.vertical), ("horizontal", mode_map.horizontal)):
            for (boundary, segment), mode in np.ndenumerate(table):
                writer.writerow([orientation, boundary, segment, Mode(int(mode)).name.lower()])


# --- rate-distortion ---

def _log_rate_integral(curve: RdCurve, lo: float, hi: float) -> float:
    quality = np.array([p.psnr for p in curve.points])
    log_rate = np.log(np.array([p.kbps for p in curve.points]))
    if len(curve.points) == 4:
        poly = np.polyint(np.polyfit(quality, log_rate, 3))
        return float(np.polyval(poly, hi) - np.polyval(poly, lo))
    if np.any(np.diff(quality) <= 0):
        raise RdCurveError(f"curve {curve.label!r}: piecewise interpolation needs strictly increasing quality")
    return float(PchipInterpolator(quality, log_rate).integrate(lo, hi))


def bd_rate(anchor: RdCurve, test: RdCurve) -> float:
    """Bjøntegaard delta-rate in percent; negative means the test curve saves bits."""
    qa = [p.psnr for p in anchor.points]
    qt = [p.psnr for p in test.points]
    lo, hi = max(min(qa), min(qt)), min(max(qa), max(qt))
    if lo >= hi:
        raise RdCurveError(f"no overlapping quality range between {anchor.label!r} and {test.label!r}")
    avg = (_log_rate_integral(test, lo, hi) - _log_rate_integral(anchor, lo, hi)) / (hi - lo)
    return float((np.exp(avg) - 1.0) * 100.0)


def rd_harness(originals: list, qps: list, fps: float = 30.0) -> tuple[dict, dict]:
    """Simulated RD curves for no filtering, the baseline rule and the oracle.

    Rates come from the simulator's bit estimate and are the same for all
    three curves; only distortion changes, and oracle signalling cost is
    not counted. Returns (curves by label, BD-rate vs. the anchor by label).
    """
    from .codec_sim import simulate_sequence

    if len(qps) < 4:
        raise RdCurveError(f"BD-rate needs at least 4 QPs, got {len(qps)}")
    points = {"anchor": [], "baseline": [], "oracle": []}
    for qp in sorted(qps, reverse=True):
        decoded, _, bits = simulate_sequence(originals, qp)
        kbps = sum(bits) / len(bits) * fps / 1000.0
        scores = {"anchor": [], "baseline": [], "oracle": []}
        for raw, dec in zip(originals, decoded):
            scores["anchor"].append(psnr(dec, raw))
            scores["baseline"].append(psnr(hevc_rule_decide(dec, qp)[1], raw))
            scores["oracle"].append(psnr(oracle_decide(dec, raw)[1], raw))
        for label, values in scores.items():
            points[label].append(RdPoint(qp=qp, kbps=kbps, psnr=float(np.mean(values))))
        logger.info(f"QP {qp}: {kbps:.1f} kbps, anchor {np.mean(scores['anchor']):.3f} dB, "
                    f"oracle {np.mean(scores['oracle']):.3f} dB")

    curves = {label: RdCurve(label=label, points=pts) for label, pts in points.items()}
    savings = {label: bd_rate(curves["anchor"], curve) for label, curve in curves.items() if label != "anchor"}
    return curves, savings


def read_rd_csv(path) -> dict:
    """RD CSV (label,qp,kbps,psnr) to curves by label."""
    rows: dict = {}
    with open(path, newline="") as handle:
        for row in csv.DictReader(handle):
            rows.setdefault(row["label"], []).append(
                RdPoint(qp=float(row["qp"]) if row["qp"] else None, kbps=float(row["kbps"]), psnr=float(row["psnr"])))
    return {label: RdCurve(label=label, points=sorted(pts, key=lambda p: p.kbps)) for label, pts in rows.items()}


def write_rd_csv(path, curves: dict) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["label", "qp", "kbps", "psnr"])
        for label, curve in curves.items():
            for p in curve.points:
                writer.writerow([label, "" if p.qp is None else p.qp, f"{p.kbps:.6f}", f"{p.psnr:.6f}"])


def write_bd_csv(path: Path, savings: dict, anchor: str = "anchor") -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["anchor", "test", "bd_rate_percent"])
        for label, value in savings.items():
            writer.writerow([anchor, label, f"{value:.6f}"])
