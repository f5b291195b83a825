"""Dense N×C×H×W tensors and a reverse-mode differentiation tape.

Operations are pure functions of their inputs. When a :class:`Tape` is
active and any input is tracked, the operation is recorded together with a
closure that maps the output adjoint to the input adjoints. Without an
active tape nothing is recorded, which is how inference runs.
"""

import contextlib
import contextvars
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ShapeError

_default_dtype = contextvars.ContextVar("vqe_default_dtype", default=np.float32)
_active_tape = contextvars.ContextVar("vqe_active_tape", default=None)
_relu_masks = contextvars.ContextVar("vqe_relu_masks", default=None)

POINTWISE_KINDS = ("sigmoid", "tanh", "relu", "linear")
ELTWISE_OPS = ("add", "sub", "mul")


def get_default_dtype():
    return _default_dtype.get()


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the dtype new tensors are created with."""
    token = _default_dtype.set(np.dtype(dtype).type)
    try:
        yield
    finally:
        _default_dtype.reset(token)


@contextlib.contextmanager
def record_relu_masks():
    """Collect the activation pattern of every relu evaluated inside the block."""
    masks = []
    token = _relu_masks.set(masks)
    try:
        yield masks
    finally:
        _relu_masks.reset(token)


class Tensor:
    __slots__ = ("data", "requires_grad", "node", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.array(data, dtype=dtype or get_default_dtype())
        if arr.ndim != 4:
            raise ShapeError(f"tensors are 4-D (N, C, H, W), got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.node = None
        self.name = name
        self._tape = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.node = None
        t.name = None
        t._tape = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __add__(self, other):
        return eltwise("add", self, other)

    def __sub__(self, other):
        return eltwise("sub", self, other)

    def __mul__(self, other):
        return eltwise("mul", self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False, dtype=None, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype, name=name)


def zeros(shape: Sequence[int], requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or get_default_dtype()), requires_grad=requires_grad)


@dataclass
class _Record:
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], tuple]


class Tape:
    """Ordered log of the operations of one forward pass.

    Records are appended in execution order, so the list is topologically
    sorted. The tape is freed by :meth:`backward`.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._token = None
        self._freed = False

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def tracks(self, t: Tensor) -> bool:
        if not t.requires_grad:
            return False
        return t.node is None or t._tape is self

    def record(self, inputs: tuple, output: Tensor, backward: Callable) -> None:
        output.requires_grad = True
        output.node = len(self.records)
        output._tape = self
        self.records.append(_Record(inputs, output, backward))

    def backward(self, loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict:
        """Adjoint pass from a scalar loss.

        Returns a mapping leaf -> gradient array. With ``wrt`` given, exactly
        those leaves are returned (zeros for leaves the loss does not reach);
        otherwise every tracked leaf reached by the pass.
        """
        if self._freed:
            raise RuntimeError("tape already consumed by a previous backward pass")
        if loss.shape != (1, 1, 1, 1):
            raise ShapeError(f"backward needs a scalar (1, 1, 1, 1) loss, got {loss.shape}")

        grads: dict[int, np.ndarray] = {}
        reached: dict[int, Tensor] = {}
        seed = np.ones_like(loss.data)
        if loss._tape is self and loss.node is not None:
            grads[id(loss)] = seed
            for rec in reversed(self.records[:loss.node + 1]):
                g = grads.pop(id(rec.output), None)
                if g is None:
                    continue
                for t, gi in zip(rec.inputs, rec.backward(g)):
                    if gi is None or not self.tracks(t):
                        continue
                    key = id(t)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi
                        reached[key] = t
        elif loss.requires_grad:
            grads[id(loss)] = seed
            reached[id(loss)] = loss

        leaves = list(wrt) if wrt is not None else [t for t in reached.values() if t.node is None]
        result = {}
        for leaf in leaves:
            g = grads.get(id(leaf))
            result[leaf] = g if g is not None else np.zeros_like(leaf.data)

        self.records.clear()
        self._freed = True
        return result


def _emit(out: np.ndarray, inputs: tuple, backward: Callable) -> Tensor:
    result = Tensor._wrap(out)
    tape = _active_tape.get()
    if tape is not None and any(tape.tracks(t) for t in inputs):
        tape.record(inputs, result, backward)
    return result


# --- convolution ---

def _windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _col2im(cols: np.ndarray, out_shape: tuple, k: int, stride: int) -> np.ndarray:
    out = np.zeros(out_shape, dtype=cols.dtype)
    ho, wo = cols.shape[2], cols.shape[3]
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += cols[..., i, j]
    return out


def _check_bias(b: Tensor | None, channels: int, op: str) -> None:
    if b is not None and b.shape != (1, channels, 1, 1):
        raise ShapeError(f"{op}: bias must have shape (1, {channels}, 1, 1), got {b.shape}")


def _check_geometry(w: Tensor, stride: int, pad: int, op: str) -> int:
    if w.data.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"{op}: weights must be square kernels (A, B, k, k), got {w.shape}")
    if stride < 1:
        raise ShapeError(f"{op}: stride must be >= 1, got {stride}")
    if pad < 0:
        raise ShapeError(f"{op}: pad must be >= 0, got {pad}")
    return w.shape[2]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation with weights (Cout, Cin, k, k) and bias (1, Cout, 1, 1)."""
    k = _check_geometry(w, stride, pad, "conv2d")
    n, c, h, wd = x.shape
    cout, cin = w.shape[0], w.shape[1]
    if c != cin:
        raise ShapeError(f"conv2d: input has {c} channels but weights expect {cin} (x {x.shape}, w {w.shape})")
    _check_bias(b, cout, "conv2d")
    if h + 2 * pad < k or wd + 2 * pad < k:
        raise ShapeError(f"conv2d: kernel {k} with pad {pad} does not fit a {h}x{wd} input")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = _windows(xp, k, stride)
    out = np.tensordot(cols, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    if b is not None:
        out += b.data

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            dcols = np.tensordot(g, w.data, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
            gxp = _col2im(dcols, xp.shape, k, stride)
            gx = gxp[:, :, pad:pad + h, pad:pad + wd]
        if w.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
        return gx, gw, gb

    inputs = (x, w, b) if b is not None else (x, w)
    return _emit(out, inputs, backward)


def conv2d_transpose(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d` with the same weights, so w is (Cin, Cout, k, k)."""
    k = _check_geometry(w, stride, pad, "conv2d_transpose")
    n, c, h, wd = x.shape
    cin, cout = w.shape[0], w.shape[1]
    if c != cin:
        raise ShapeError(f"conv2d_transpose: input has {c} channels but weights expect {cin} (x {x.shape}, w {w.shape})")
    _check_bias(b, cout, "conv2d_transpose")
    full_h, full_w = (h - 1) * stride + k, (wd - 1) * stride + k
    if full_h - 2 * pad < 1 or full_w - 2 * pad < 1:
        raise ShapeError(f"conv2d_transpose: pad {pad} leaves no output for a {h}x{wd} input")

    cols = np.tensordot(x.data, w.data, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
    full = _col2im(cols, (n, cout, full_h, full_w), k, stride)
    out = np.ascontiguousarray(full[:, :, pad:full_h - pad, pad:full_w - pad])
    if b is not None:
        out += b.data

    def backward(g):
        gx = gw = gb = None
        gwin = _windows(np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))), k, stride)
        if x.requires_grad:
            gx = np.tensordot(gwin, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        if w.requires_grad:
            gw = np.tensordot(x.data, gwin, axes=([0, 2, 3], [0, 2, 3]))
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
        return gx, gw, gb

    inputs = (x, w, b) if b is not None else (x, w)
    return _emit(out, inputs, backward)


# --- elementwise ---

def pointwise(x: Tensor, kind: str) -> Tensor:
    if kind == "sigmoid":
        y = expit(x.data)
        return _emit(y, (x,), lambda g: (g * y * (1.0 - y),))
    if kind == "tanh":
        y = np.tanh(x.data)
        return _emit(y, (x,), lambda g: (g * (1.0 - y * y),))
    if kind == "relu":
        mask = x.data > 0
        recording = _relu_masks.get()
        if recording is not None:
            recording.append(np.packbits(mask))
        return _emit(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))
    if kind == "linear":
        return _emit(x.data, (x,), lambda g: (g,))
    raise ValueError(f"unknown pointwise kind {kind!r}; expected one of {POINTWISE_KINDS}")


def sigmoid(x: Tensor) -> Tensor:
    return pointwise(x, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    return pointwise(x, "tanh")


def relu(x: Tensor) -> Tensor:
    return pointwise(x, "relu")


def eltwise(op: str, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"eltwise {op}: shapes differ, {a.shape} vs {b.shape}")
    if op == "add":
        return _emit(a.data + b.data, (a, b), lambda g: (g, g))
    if op == "sub":
        return _emit(a.data - b.data, (a, b), lambda g: (g, -g))
    if op == "mul":
        return _emit(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))
    raise ValueError(f"unknown eltwise op {op!r}; expected one of {ELTWISE_OPS}")


def scale(x: Tensor, factor: float) -> Tensor:
    return _emit(x.data * factor, (x,), lambda g: (g * factor,))


# --- channel plumbing ---

def concat_channels(*tensors: Tensor) -> Tensor:
    if not tensors:
        raise ShapeError("concat_channels needs at least one tensor")
    n, _, h, w = tensors[0].shape
    for t in tensors[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ShapeError(f"concat_channels: N/H/W mismatch, {tensors[0].shape} vs {t.shape}")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _emit(np.concatenate([t.data for t in tensors], axis=1), tensors, backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    c = x.shape[1]
    if not 0 <= start < stop <= c:
        raise ShapeError(f"slice_channels: [{start}, {stop}) is not inside {c} channels")

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return _emit(x.data[:, start:stop].copy(), (x,), backward)


def split_channels(x: Tensor, sizes: Sequence[int]) -> tuple:
    if sum(sizes) != x.shape[1]:
        raise ShapeError(f"split_channels: sizes {list(sizes)} do not sum to {x.shape[1]} channels")
    bounds = np.cumsum([0] + list(sizes))
    return tuple(slice_channels(x, int(bounds[i]), int(bounds[i + 1])) for i in range(len(sizes)))


# --- reductions ---

def sum_all(x: Tensor) -> Tensor:
    total = np.array(x.data.sum(), dtype=x.dtype).reshape(1, 1, 1, 1)
    return _emit(total, (x,), lambda g: (np.full_like(x.data, g.reshape(-1)[0]),))


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over every element, as a scalar tensor."""
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes differ, {a.shape} vs {b.shape}")
    diff = a.data - b.data
    count = diff.size
    value = np.array(np.mean(diff * diff), dtype=a.dtype).reshape(1, 1, 1, 1)

    def backward(g):
        ga = g.reshape(-1)[0] * (2.0 / count) * diff
        return ga, -ga

    return _emit(value, (a, b), backward)


# --- resampling ---

def bilinear_matrix(n: int, factor: int, dtype) -> np.ndarray:
    """(n·factor, n) interpolation matrix, half-pixel centres, edges clamped."""
    out = n * factor
    src = (np.arange(out) + 0.5) / factor - 0.5
    src = np.clip(src, 0, n - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    frac = src - lo
    m = np.zeros((out, n), dtype=dtype)
    m[np.arange(out), lo] += 1.0 - frac
    m[np.arange(out), hi] += frac
    return m


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    if factor == 1:
        return pointwise(x, "linear")
    _, _, h, w = x.shape
    ah = bilinear_matrix(h, factor, x.dtype)
    aw = bilinear_matrix(w, factor, x.dtype)
    out = np.matmul(np.matmul(ah, x.data), aw.T)
    return _emit(out, (x,), lambda g: (np.matmul(np.matmul(ah.T, g), aw),))


def downsample_area(x: Tensor, factor: int) -> Tensor:
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise ShapeError(f"downsample_area: {h}x{w} is not divisible by {factor}")
    out = x.data.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))

    def backward(g):
        up = np.repeat(np.repeat(g, factor, axis=2), factor, axis=3)
        return (up / (factor * factor),)

    return _emit(out, (x,), backward)
