"""TU-partition sidecar files and the guided maps derived from them.

Sidecar format (one file per sequence)::

    # vqe-tu v1
    dims <width> <height>
    frame <index>
    <x> <y> <size>
    ...

Frames appear in display order starting at 0. TUs are square (4, 8, 16 or
32 pixels), aligned to their own size inside the 64×64 CTU grid, and must
tile the frame exactly.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .errors import PartitionError, ShapeError
from .frames import LumaFrame, coded_dims

logger = logging.getLogger("vqe.partition")

HEADER = "# vqe-tu v1"
CTU_SIZE = 64
TU_SIZES = (4, 8, 16, 32)
_DEPTH = {32: 1, 16: 2, 8: 3, 4: 4}


class Tu(NamedTuple):
    x: int
    y: int
    size: int

    @property
    def depth(self) -> int:
        return _DEPTH[self.size]


def _morton(x: int, y: int) -> int:
    key = 0
    for bit in range(4):
        key |= ((x >> bit) & 1) << (2 * bit)
        key |= ((y >> bit) & 1) << (2 * bit + 1)
    return key


def canonical_key(tu: Tu) -> tuple:
    """Raster CTU order, then Z-order inside the CTU."""
    return (tu.y // CTU_SIZE, tu.x // CTU_SIZE, _morton((tu.x % CTU_SIZE) // 4, (tu.y % CTU_SIZE) // 4))


@dataclass(frozen=True)
class TuPartition:
    width: int
    height: int
    tus: tuple = field(default_factory=tuple)

    def __post_init__(self):
        ordered = tuple(sorted((Tu(*t) for t in self.tus), key=canonical_key))
        object.__setattr__(self, "tus", ordered)

    @property
    def dims(self) -> tuple[int, int]:
        return self.width, self.height

    def __len__(self) -> int:
        return len(self.tus)


@dataclass
class PartitionReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        return "ok" if self.ok else "; ".join(self.violations)


@dataclass(frozen=True, eq=False)
class GuidedMapSet:
    depth: np.ndarray
    boundary: np.ndarray
    mean: np.ndarray


# --- validation ---

def _tu_problem(tu: Tu, width: int, height: int) -> str | None:
    if tu.size not in TU_SIZES:
        return f"TU at ({tu.x},{tu.y}) has unsupported size {tu.size}"
    if tu.x < 0 or tu.y < 0 or tu.x % tu.size or tu.y % tu.size:
        return f"alignment violation: {tu.size}x{tu.size} TU at ({tu.x},{tu.y}) is not on its quadtree grid"
    if tu.x + tu.size > width or tu.y + tu.size > height:
        return f"TU at ({tu.x},{tu.y}) size {tu.size} extends past the {width}x{height} frame"
    return None


def validate_partition(p: TuPartition, dims: tuple[int, int] | None = None) -> PartitionReport:
    """Check alignment and exact tiling by counting pixel coverage."""
    report = PartitionReport()
    width, height = dims or p.dims
    if (width, height) != p.dims:
        report.violations.append(f"partition is {p.width}x{p.height}, frame is {width}x{height}")
        return report

    coverage = np.zeros((height, width), dtype=np.int32)
    for tu in p.tus:
        problem = _tu_problem(tu, width, height)
        if problem:
            report.violations.append(problem)
            continue
        coverage[tu.y:tu.y + tu.size, tu.x:tu.x + tu.size] += 1

    overlap = np.argwhere(coverage > 1)
    if overlap.size:
        y, x = overlap[0]
        report.violations.append(f"overlap at ({x},{y})")
    gap = np.argwhere(coverage == 0)
    if gap.size:
        y, x = gap[0]
        report.violations.append(f"coverage gap at ({x},{y})")
    return report


# --- sidecar I/O ---

def parse_tu_file(path) -> tuple[tuple[int, int], list]:
    """Read a sidecar; returns (dims, partitions in frame order)."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise PartitionError(f"missing header {HEADER!r}", line=1)

    dims = None
    frames: list[TuPartition] = []
    owner = None
    current: list[Tu] = []
    frame_line = 0

    def close_frame():
        gap = np.argwhere(owner == 0)
        if gap.size:
            y, x = gap[0]
            raise PartitionError(f"coverage gap at ({x},{y}) in frame {len(frames)}", line=frame_line)
        frames.append(TuPartition(dims[0], dims[1], tuple(current)))

    for number, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "dims":
            if dims is not None:
                raise PartitionError("dims declared twice", line=number)
            try:
                width, height = int(parts[1]), int(parts[2])
            except (IndexError, ValueError):
                raise PartitionError(f"malformed dims line {line!r}", line=number) from None
            if len(parts) != 3 or width <= 0 or height <= 0 or width % 4 or height % 4:
                raise PartitionError(f"dims must be two positive multiples of 4, got {line!r}", line=number)
            dims = (width, height)
        elif parts[0] == "frame":
            if dims is None:
                raise PartitionError("frame before dims", line=number)
            if owner is not None:
                close_frame()
            try:
                index = int(parts[1])
            except (IndexError, ValueError):
                raise PartitionError(f"malformed frame line {line!r}", line=number) from None
            if len(parts) != 2 or index != len(frames):
                raise PartitionError(f"expected frame {len(frames)}, got {line!r}", line=number)
            owner = np.zeros((dims[1], dims[0]), dtype=np.int32)
            current = []
            frame_line = number
        else:
            if owner is None:
                raise PartitionError("TU line before any frame", line=number)
            try:
                if len(parts) != 3:
                    raise ValueError
                tu = Tu(int(parts[0]), int(parts[1]), int(parts[2]))
            except ValueError:
                raise PartitionError(f"malformed TU line {line!r}", line=number) from None
            problem = _tu_problem(tu, *dims)
            if problem:
                raise PartitionError(problem, line=number)
            region = owner[tu.y:tu.y + tu.size, tu.x:tu.x + tu.size]
            taken = region[region > 0]
            if taken.size:
                raise PartitionError(f"TU at ({tu.x},{tu.y}) size {tu.size} overlaps the TU on line {taken[0]}", line=number)
            region[...] = number
            current.append(tu)

    if owner is not None:
        close_frame()
    if dims is None:
        raise PartitionError("no dims line", line=len(lines))
    logger.debug(f"parsed {len(frames)} frame partitions from {path}")
    return dims, frames


def format_tu_file(partitions: list, dims: tuple[int, int]) -> str:
    out = [HEADER, f"dims {dims[0]} {dims[1]}"]
    for index, p in enumerate(partitions):
        if p.dims != tuple(dims):
            raise ShapeError(f"frame {index} partition is {p.width}x{p.height}, sidecar dims are {dims[0]}x{dims[1]}")
        out.append(f"frame {index}")
        out.extend(f"{tu.x} {tu.y} {tu.size}" for tu in p.tus)
    return "\n".join(out) + "\n"


def write_tu_file(path, partitions: list, dims: tuple[int, int]) -> None:
    Path(path).write_text(format_tu_file(partitions, dims))


# --- construction ---

def build_quadtree(width: int, height: int, should_split: Callable[[int, int, int], bool],
                   min_size: int = 4, max_size: int = 32) -> TuPartition:
    """Quadtree tiling of every CTU.

    Blocks larger than ``max_size`` or crossing the frame edge always split;
    others split while ``should_split(x, y, size)`` holds and they are
    larger than ``min_size``.
    """
    if width % 4 or height % 4:
        raise ShapeError(f"frame {width}x{height} is not a multiple of the 4-pixel minimum TU")
    tus = []

    def visit(x, y, size):
        if x >= width or y >= height:
            return
        crossing = x + size > width or y + size > height
        if size > max_size or (crossing and size > 4) or (size > min_size and should_split(x, y, size)):
            half = size // 2
            for dy in (0, half):
                for dx in (0, half):
                    visit(x + dx, y + dy, half)
        else:
            tus.append(Tu(x, y, size))

    for cy in range(0, height, CTU_SIZE):
        for cx in range(0, width, CTU_SIZE):
            visit(cx, cy, CTU_SIZE)
    return TuPartition(width, height, tuple(tus))


def uniform_partition(dims: tuple[int, int], size: int) -> TuPartition:
    if size not in TU_SIZES:
        raise PartitionError(f"unsupported TU size {size}")
    return build_quadtree(dims[0], dims[1], lambda *_: True, min_size=size)


# --- guided maps ---

def owner_map(p: TuPartition) -> np.ndarray:
    owner = np.full((p.height, p.width), -1, dtype=np.int32)
    for index, tu in enumerate(p.tus):
        owner[tu.y:tu.y + tu.size, tu.x:tu.x + tu.size] = index
    return owner


def depth_map(p: TuPartition) -> np.ndarray:
    """Per-pixel TU depth below the 64×64 CTU."""
    depth = np.zeros((p.height, p.width), dtype=np.uint8)
    for tu in p.tus:
        depth[tu.y:tu.y + tu.size, tu.x:tu.x + tu.size] = tu.depth
    return depth


def boundary_map(p: TuPartition) -> np.ndarray:
    """1 on the first row/column of each TU, frame borders excluded."""
    boundary = np.zeros((p.height, p.width), dtype=np.uint8)
    for tu in p.tus:
        if tu.y > 0:
            boundary[tu.y, tu.x:tu.x + tu.size] = 1
        if tu.x > 0:
            boundary[tu.y:tu.y + tu.size, tu.x] = 1
    return boundary


def mean_map(frame: LumaFrame, p: TuPartition) -> np.ndarray:
    """Every TU filled with the rounded (half up) mean of its decoded pixels.

    A partition of the frame padded to the 4-pixel grid is accepted; the
    frame is edge-padded to match and the map cropped back.
    """
    width, height = frame.dims
    if p.dims != frame.dims:
        if p.dims != coded_dims(frame.dims):
            raise ShapeError(f"mean_map: frame is {width}x{height}, partition is {p.width}x{p.height}")
        frame = frame.padded(p.width, p.height)
    owner = owner_map(p).ravel()
    sums = np.bincount(owner, weights=frame.samples.ravel().astype(np.float64), minlength=len(p.tus))
    counts = np.bincount(owner, minlength=len(p.tus))
    means = np.floor(sums / counts + 0.5).astype(np.uint8)
    return means[owner].reshape(p.height, p.width)[:height, :width]


def guided_maps(frame: LumaFrame, p: TuPartition) -> GuidedMapSet:
    crop = (slice(0, frame.height), slice(0, frame.width))
    return GuidedMapSet(depth=depth_map(p)[crop], boundary=boundary_map(p)[crop], mean=mean_map(frame, p))
