import logging
import queue
import threading
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy import ndimage

from .codec_sim import simulate_sequence
from .errors import DataError, ShapeError
from .frames import LumaFrame, coded_dims
from .partition import TuPartition, mean_map, parse_tu_file, validate_partition
from .tensor import Tensor
from .yuv import read_yuv420

logger = logging.getLogger("vqe.data")


def window_indices(center: int, radius: int, length: int) -> list:
    """Frame indices center-T..center+T, clamped at the ends by repetition."""
    return [min(max(center + k, 0), length - 1) for k in range(-radius, radius + 1)]


@dataclass
class FramePairSet:
    raw: list
    compressed: list
    partitions: list | None = None
    qp: str | None = None
    name: str = "sequence"
    _guides: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.raw) != len(self.compressed):
            raise DataError(f"{self.name}: {len(self.raw)} raw frames but {len(self.compressed)} compressed frames")
        if not self.raw:
            raise DataError(f"{self.name}: empty sequence")
        dims = self.raw[0].dims
        for i, (r, c) in enumerate(zip(self.raw, self.compressed)):
            if r.dims != dims or c.dims != dims:
                raise ShapeError(f"{self.name}: frame {i} dimensions differ from {dims[0]}x{dims[1]}")
        if self.partitions is not None:
            if len(self.partitions) != len(self.raw):
                raise DataError(f"{self.name}: {len(self.partitions)} partitions for {len(self.raw)} frames")
            for i, p in enumerate(self.partitions):
                report = validate_partition(p, coded_dims(dims))
                if not report.ok:
                    raise DataError(f"{self.name}: partition of frame {i} is invalid: {report}")

    def __len__(self) -> int:
        return len(self.raw)

    @property
    def dims(self) -> tuple[int, int]:
        return self.raw[0].dims

    @property
    def has_partitions(self) -> bool:
        return self.partitions is not None

    def guide(self, index: int) -> np.ndarray:
        """Mean-filled guided map of compressed frame ``index``, normalized to [0, 1]."""
        if self.partitions is None:
            raise DataError(f"{self.name}: no TU partitions, guided maps unavailable")
        if index not in self._guides:
            self._guides[index] = mean_map(self.compressed[index], self.partitions[index]).astype(np.float64) / 255.0
        return self._guides[index]

    @classmethod
    def from_files(cls, raw_path, compressed_path, width: int, height: int, tu_path=None, qp=None,
                   start: int = 0, count: int | None = None, name: str | None = None) -> "FramePairSet":
        raw = read_yuv420(raw_path, width, height, start, count)
        comp = read_yuv420(compressed_path, width, height, start, count)
        partitions = None
        if tu_path is not None:
            dims, parts = parse_tu_file(tu_path)
            if dims != coded_dims((width, height)):
                raise DataError(f"{tu_path} describes {dims[0]}x{dims[1]} frames, video is {width}x{height}")
            partitions = parts[start:start + len(raw)]
        return cls(raw.luma, comp.luma, partitions, qp=qp, name=name or str(compressed_path))


def synthetic_clip(frames: int, width: int, height: int, seed: int = 0) -> list:
    """Moving textured content: smoothed noise, hard-edged rectangles and a gradient, panning over time."""
    rng = np.random.default_rng(seed)
    margin = 2 * max(frames, 1) + 8
    big_h, big_w = height + 2 * margin, width + 2 * margin
    texture = ndimage.gaussian_filter(rng.normal(0, 1, (big_h, big_w)), sigma=1.5)
    texture = 40.0 * texture / (texture.std() + 1e-12)
    yy, xx = np.mgrid[0:big_h, 0:big_w]
    scene = 128.0 + texture + 30.0 * np.sin(xx / 7.0) * np.cos(yy / 11.0)
    for _ in range(max(3, (big_h * big_w) // 2048)):
        h, w = rng.integers(4, 20, size=2)
        y, x = rng.integers(0, big_h - h), rng.integers(0, big_w - w)
        scene[y:y + h, x:x + w] += rng.uniform(-60, 60)
    dy, dx = rng.integers(-2, 3, size=2)
    if dy == 0 and dx == 0:
        dx = 1
    clip = []
    for t in range(frames):
        y0, x0 = margin + dy * t, margin + dx * t
        clip.append(LumaFrame.from_float(scene[y0:y0 + height, x0:x0 + width]))
    return clip


def simulated_pairs(raw: Sequence[LumaFrame], qp: int, adaptive: bool = True, name: str = "synthetic") -> FramePairSet:
    decoded, partitions, _ = simulate_sequence(list(raw), qp, adaptive=adaptive)
    return FramePairSet(list(raw), decoded, partitions, qp=str(qp), name=name)


@dataclass
class TrainingSample:
    """Co-located patches, normalized to [0, 1]. ``window`` is (2T+1, P, P)."""

    window: np.ndarray
    guide: np.ndarray | None
    target: np.ndarray
    frame: int
    y: int
    x: int


def sample_patches(pairs: FramePairSet, radius: int, patch: int, count: int, seed: int,
                   guidance: bool = True) -> list:
    n = len(pairs)
    if n < 2 * radius + 1:
        raise DataError(f"{pairs.name}: {n} frames cannot hold a window of {2 * radius + 1}")
    width, height = pairs.dims
    if patch > width or patch > height:
        raise ShapeError(f"patch {patch} is larger than the {width}x{height} frames")
    if guidance and not pairs.has_partitions:
        raise DataError(f"{pairs.name}: guidance needs TU partitions")

    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(count):
        t = int(rng.integers(n))
        y = int(rng.integers(height - patch + 1))
        x = int(rng.integers(width - patch + 1))
        crop = np.s_[y:y + patch, x:x + patch]
        window = np.stack([pairs.compressed[i].samples[crop] for i in window_indices(t, radius, n)]).astype(np.float64) / 255.0
        guide = pairs.guide(t)[crop].copy() if guidance else None
        target = pairs.raw[t].samples[crop].astype(np.float64) / 255.0
        samples.append(TrainingSample(window, guide, target, t, y, x))
    return samples


@dataclass
class Batch:
    window: list
    guide: Tensor | None
    target: Tensor

    @property
    def size(self) -> int:
        return self.target.shape[0]


def make_batch(samples: Sequence[TrainingSample]) -> Batch:
    windows = np.stack([s.window for s in samples])  # (N, 2T+1, P, P)
    window = [Tensor(windows[:, k:k + 1]) for k in range(windows.shape[1])]
    guide = None
    if samples[0].guide is not None:
        guide = Tensor(np.stack([s.guide for s in samples])[:, None])
    target = Tensor(np.stack([s.target for s in samples])[:, None])
    return Batch(window, guide, target)


def epoch_batches(samples: Sequence[TrainingSample], batch_size: int, seed: int, epoch: int) -> Iterator[Batch]:
    """Shuffled batches; the order depends only on (seed, epoch)."""
    order = np.random.default_rng([seed, epoch]).permutation(len(samples))
    for start in range(0, len(order), batch_size):
        yield make_batch([samples[i] for i in order[start:start + batch_size]])


_DONE = object()


def prefetch(items: Iterable, depth: int) -> Iterator:
    """Run ``items`` on one producer thread feeding a bounded queue; order is preserved."""
    if depth <= 0:
        yield from items
        return

    hand_off: queue.Queue = queue.Queue(maxsize=depth)
    stop = threading.Event()

    def produce():
        try:
            for item in items:
                while not stop.is_set():
                    try:
                        hand_off.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
            hand_off.put(_DONE)
        except BaseException as exc:  # surfaced in the consumer
            hand_off.put(exc)

    worker = threading.Thread(target=produce, name="vqe-prefetch", daemon=True)
    worker.start()
    try:
        while True:
            item = hand_off.get()
            if item is _DONE:
                break
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
        worker.join(timeout=1.0)
