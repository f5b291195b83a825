"""Raw planar YUV 4:2:0 (8-bit) and PGM map I/O."""

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np
from dotenv import dotenv_values

from .errors import DataError, ShapeError
from .frames import LumaFrame

logger = logging.getLogger("vqe.yuv")

NEUTRAL_CHROMA = 128


@dataclass
class YuvSequence:
    """Luma frames plus the untouched chroma bytes of every frame."""

    width: int
    height: int
    luma: list
    chroma: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.luma)

    def with_luma(self, luma: Sequence[LumaFrame]) -> "YuvSequence":
        if len(luma) != len(self.luma):
            raise DataError(f"replacement has {len(luma)} frames, sequence has {len(self.luma)}")
        return YuvSequence(self.width, self.height, list(luma), list(self.chroma))


def frame_bytes(width: int, height: int) -> int:
    if width <= 0 or height <= 0 or width % 2 or height % 2:
        raise ShapeError(f"4:2:0 frames need positive even dimensions, got {width}x{height}")
    return width * height * 3 // 2


def read_yuv420(path, width: int, height: int, start: int = 0, count: int | None = None) -> YuvSequence:
    size = frame_bytes(width, height)
    total = os.path.getsize(path)
    if total == 0 or total % size:
        frames = total // size
        expected = (frames + (1 if total % size else 0)) * size or size
        raise DataError(f"{path}: {total} bytes is not a whole number of {width}x{height} frames "
                        f"(expected {expected} bytes, short by {expected - total})")
    available = total // size
    if start < 0 or start >= available:
        raise DataError(f"{path}: start frame {start} outside 0..{available - 1}")
    count = available - start if count is None else min(count, available - start)

    raw = np.fromfile(path, dtype=np.uint8, count=count * size, offset=start * size).reshape(count, size)
    luma_size = width * height
    luma = [LumaFrame(row[:luma_size].reshape(height, width).copy()) for row in raw]
    chroma = [row[luma_size:].copy() for row in raw]
    logger.debug(f"read {count} frames of {width}x{height} from {path}")
    return YuvSequence(width, height, luma, chroma)


def write_yuv420(frames, path) -> None:
    """Write a YuvSequence (chroma preserved) or bare luma frames (neutral chroma)."""
    if isinstance(frames, YuvSequence):
        luma, chroma = frames.luma, frames.chroma
    else:
        luma, chroma = list(frames), []
    if not luma:
        raise DataError("no frames to write")
    height, width = luma[0].samples.shape
    chroma_size = frame_bytes(width, height) - width * height
    with open(path, "wb") as handle:
        for i, frame in enumerate(luma):
            if frame.samples.shape != (height, width):
                raise ShapeError(f"frame {i} is {frame.width}x{frame.height}, expected {width}x{height}")
            handle.write(frame.samples.tobytes())
            if i < len(chroma):
                handle.write(np.asarray(chroma[i], dtype=np.uint8).tobytes())
            else:
                handle.write(bytes([NEUTRAL_CHROMA]) * chroma_size)
    logger.debug(f"wrote {len(luma)} frames to {path}")


# --- PGM maps ---

def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ShapeError(f"PGM images are 2-D uint8, got {image.dtype} {image.shape}")
    if not cv2.imwrite(str(path), image):
        raise DataError(f"could not write {path}")


def read_pgm(path) -> np.ndarray:
    image = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if image is None:
        raise DataError(f"could not read {path}")
    return image


def _sidecar(path) -> Path:
    return Path(f"{path}.scale.txt")


def write_scaled_pgm(path, values: np.ndarray) -> tuple[float, float]:
    """Stretch a real-valued map onto 0..255; min and max go to ``<path>.scale.txt``."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo
    scaled = np.zeros_like(values) if span == 0 else (values - lo) * (255.0 / span)
    write_pgm(path, np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8))
    _sidecar(path).write_text(f"min = {lo!r}\nmax = {hi!r}\n")
    return lo, hi


def read_scaled_pgm(path) -> np.ndarray:
    """Inverse of write_scaled_pgm, up to the 8-bit quantization of the stretch."""
    image = read_pgm(path).astype(np.float64)
    sidecar = _sidecar(path)
    if not sidecar.exists():
        raise DataError(f"missing scale sidecar {sidecar}")
    scale = dotenv_values(sidecar)
    try:
        lo, hi = float(scale["min"]), float(scale["max"])
    except (KeyError, TypeError, ValueError):
        raise DataError(f"{sidecar} must define numeric min and max") from None
    return lo + image * ((hi - lo) / 255.0)
