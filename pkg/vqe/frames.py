from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError


@dataclass(frozen=True, eq=False)
class LumaFrame:
    """8-bit luma plane, row-major (height, width)."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples)
        if arr.ndim != 2:
            raise ShapeError(f"luma frames are 2-D, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if arr.dtype.kind not in "iuf":
                raise DataError(f"luma samples must be numeric, got dtype {arr.dtype}")
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise DataError(f"luma samples must lie in [0, 255], got [{arr.min()}, {arr.max()}]")
            if arr.dtype.kind == "f" and not np.array_equal(arr, np.floor(arr)):
                raise DataError("luma samples are fractional; use LumaFrame.from_float to round them")
            arr = arr.astype(np.uint8)
        object.__setattr__(self, "samples", arr)

    @classmethod
    def from_float(cls, values: np.ndarray) -> "LumaFrame":
        """Round half away from zero and clip into 8-bit range."""
        return cls(np.clip(round_half_away(values), 0, 255).astype(np.uint8))

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return self.width, self.height

    def as_float(self) -> np.ndarray:
        return self.samples.astype(np.float64)

    def same_as(self, other: "LumaFrame") -> bool:
        return self.samples.shape == other.samples.shape and bool(np.array_equal(self.samples, other.samples))

    def padded(self, width: int, height: int) -> "LumaFrame":
        """Extend to width x height by replicating the last column and row."""
        if width < self.width or height < self.height:
            raise ShapeError(f"cannot pad {self.width}x{self.height} down to {width}x{height}")
        return LumaFrame(np.pad(self.samples, ((0, height - self.height), (0, width - self.width)), mode="edge"))

    def cropped(self, width: int, height: int) -> "LumaFrame":
        return LumaFrame(self.samples[:height, :width].copy())


@dataclass(frozen=True, eq=False)
class NoiseMap:
    """Per-pixel non-negative standard deviation."""

    values: np.ndarray

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def mean(self) -> float:
        return float(self.values.mean())


def round_half_away(values) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def require_same_dims(a, b, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: dimension mismatch, {a.shape[::-1]} vs {b.shape[::-1]} (width x height)")


def coded_dims(dims: tuple[int, int], multiple: int = 4) -> tuple[int, int]:
    """Frame size rounded up to the minimum TU grid."""
    width, height = dims
    return width + -width % multiple, height + -height % multiple
