"""Full-sequence enhancement with sliding temporal windows and optional spatial tiling."""

import csv
import logging
import time
from typing import Sequence

import numpy as np

from .data import FramePairSet, window_indices
from .errors import ConfigError, DataError, ShapeError
from .frames import LumaFrame
from .metrics import eval_sequence
from .network import enhance_window, receptive_radius
from .partition import mean_map
from .schemas import EvalReport, ModelConfig, RobustnessRow
from .tensor import Tensor

logger = logging.getLogger("vqe.enhance")

ALIGN = 16


def _pad_to(plane: np.ndarray, multiple: int = ALIGN) -> np.ndarray:
    h, w = plane.shape[-2:]
    pad = [(0, 0)] * (plane.ndim - 2) + [(0, -h % multiple), (0, -w % multiple)]
    return np.pad(plane, pad, mode="edge")


def tile_spans(length: int, tile: int, overlap: int) -> list:
    """(tile_start, keep_start, keep_stop) per tile; kept spans partition [0, length).

    Tiles advance by ``tile - 2·overlap``; neighbours hand over at the middle
    of their overlap.
    """
    if tile >= length:
        return [(0, 0, length)]
    step = tile - 2 * overlap
    if step <= 0:
        raise ConfigError(f"tile {tile} leaves no room after an overlap of {overlap} on both sides")
    starts = list(range(0, length - tile, step)) + [length - tile]
    spans = []
    for i, start in enumerate(starts):
        keep_start = 0 if i == 0 else (start + starts[i - 1] + tile) // 2
        keep_stop = length if i == len(starts) - 1 else (starts[i + 1] + start + tile) // 2
        spans.append((start, keep_start, keep_stop))
    return spans


def min_overlap(config: ModelConfig) -> int:
    """Smallest tile overlap, on the 16-pixel grid, that covers the receptive field."""
    return -(-receptive_radius(config) // ALIGN) * ALIGN


def enhance_arrays(params: dict, config: ModelConfig, window: np.ndarray, guide: np.ndarray | None,
                   tile: int | None = None, overlap: int | None = None) -> np.ndarray:
    """Enhance one centre frame from normalized (2T+1, H, W) arrays with H, W multiples of 16.

    Tiled output equals whole-frame output: every kept pixel sits at least
    ``overlap`` pixels inside its tile, and ``overlap`` must cover the
    receptive field. ``None`` picks the smallest such overlap.
    """
    _, height, width = window.shape
    if height % ALIGN or width % ALIGN:
        raise ShapeError(f"frames must be padded to multiples of {ALIGN}, got {width}x{height}")

    def run(y0, y1, x0, x1):
        frames = [Tensor(window[k, y0:y1, x0:x1][None, None]) for k in range(window.shape[0])]
        g = None if guide is None else Tensor(guide[y0:y1, x0:x1][None, None])
        return enhance_window(params, config, frames, g)[0, 0]

    if tile is None or (tile >= height and tile >= width):
        return run(0, height, 0, width)
    if tile % ALIGN:
        raise ConfigError(f"tile size must be a multiple of {ALIGN}, got {tile}")
    required = min_overlap(config)
    if overlap is None:
        overlap = required
    if overlap < required or overlap % ALIGN:
        raise ConfigError(f"overlap {overlap} must be a multiple of {ALIGN} and at least {required}, "
                          f"the receptive field of this model")

    out = np.empty((height, width), dtype=np.float64)
    for ty, ky0, ky1 in tile_spans(height, tile, overlap):
        for tx, kx0, kx1 in tile_spans(width, tile, overlap):
            piece = run(ty, ty + min(tile, height), tx, tx + min(tile, width))
            out[ky0:ky1, kx0:kx1] = piece[ky0 - ty:ky1 - ty, kx0 - tx:kx1 - tx]
    return out


def enhance(frames: Sequence[LumaFrame], params: dict, config: ModelConfig, partitions: Sequence | None = None,
            tile: int | None = None, overlap: int | None = None) -> tuple[list, list]:
    """Enhance every frame of a compressed sequence; returns (frames, per-frame milliseconds)."""
    if not frames:
        raise DataError("cannot enhance an empty sequence")
    if config.guidance and partitions is None:
        raise DataError("model uses guided maps; TU partitions are required")
    if not config.guidance and partitions is not None:
        logger.warning("model was trained without guidance; ignoring TU partitions")
        partitions = None
    if partitions is not None and len(partitions) != len(frames):
        raise DataError(f"{len(partitions)} partitions for {len(frames)} frames")

    height, width = frames[0].height, frames[0].width
    n, radius = len(frames), config.temporal_radius
    if n < config.window:
        logger.warning(f"{n} frames are fewer than the {config.window}-frame window; ends are repeated")
    planes = _pad_to(np.stack([f.samples for f in frames]).astype(np.float64) / 255.0)

    enhanced, timings = [], []
    for t in range(n):
        started = time.perf_counter()
        window = planes[window_indices(t, radius, n)]
        guide = None
        if partitions is not None:
            guide = _pad_to(mean_map(frames[t], partitions[t]).astype(np.float64) / 255.0)
        out = enhance_arrays(params, config, window, guide, tile=tile, overlap=overlap)
        enhanced.append(LumaFrame.from_float(out[:height, :width] * 255.0))
        timings.append((time.perf_counter() - started) * 1000.0)
    logger.info(f"enhanced {n} frames of {width}x{height}, {np.mean(timings):.1f} ms per frame")
    return enhanced, timings


def evaluate_pairs(pairs: FramePairSet, params: dict, config: ModelConfig, tile: int | None = None,
                   start_index: int = 0) -> tuple[EvalReport, list]:
    enhanced, timings = enhance(pairs.compressed, params, config,
                                pairs.partitions if config.guidance else None, tile=tile)
    report = eval_sequence(pairs.raw, pairs.compressed, enhanced, sequence=pairs.name, qp=pairs.qp,
                           start_index=start_index, timings_ms=timings)
    return report, enhanced


def robustness_sweep(params: dict, config: ModelConfig, test_sets: Sequence[FramePairSet],
                     tile: int | None = None) -> list:
    """One row per QP label: mean PSNRs and mean ΔPSNR over every test set carrying that label."""
    grouped: dict = {}
    for pairs in test_sets:
        report, _ = evaluate_pairs(pairs, params, config, tile=tile)
        grouped.setdefault(pairs.qp or "?", []).append(report)

    rows = []
    for qp, reports in grouped.items():
        frames = [f for r in reports for f in r.frames]
        rows.append(RobustnessRow(
            qp=qp,
            frames=len(frames),
            mean_psnr_compressed=float(np.mean([f.psnr_compressed for f in frames])),
            mean_psnr_enhanced=float(np.mean([f.psnr_enhanced for f in frames])),
            mean_delta_psnr=float(np.mean([f.delta_psnr for f in frames])),
        ))
        logger.info(f"QP {qp}: mean ΔPSNR {rows[-1].mean_delta_psnr:.4f} dB over {len(frames)} frames")
    return rows


def write_robustness_csv(path, rows: Sequence[RobustnessRow]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["qp", "frames", "mean_psnr_compressed", "mean_psnr_enhanced", "mean_delta_psnr"])
        for row in rows:
            writer.writerow([row.qp, row.frames, repr(row.mean_psnr_compressed),
                             repr(row.mean_psnr_enhanced), repr(row.mean_delta_psnr)])
