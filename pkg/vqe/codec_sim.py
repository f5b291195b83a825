"""Block-DCT quantization simulator and compression-noise analysis.

The simulator models intra coding without spatial prediction: every block
is transformed with an orthonormal 2-D DCT-II, each coefficient is rounded
to a multiple of its quantization step, and the block is transformed back.
Quantization is therefore the only lossy stage.
"""

import logging
from collections import defaultdict

import numpy as np
from scipy import fft, ndimage

from .errors import CodecError
from .frames import LumaFrame, NoiseMap, coded_dims, require_same_dims, round_half_away
from .partition import TU_SIZES, TuPartition, build_quadtree, uniform_partition

logger = logging.getLogger("vqe.codec_sim")

BLOCK_SIZES = TU_SIZES


def _check_block(block: np.ndarray) -> int:
    if block.ndim < 2 or block.shape[-1] != block.shape[-2] or block.shape[-1] not in BLOCK_SIZES:
        raise CodecError(f"unsupported block shape {block.shape}; blocks are p×p with p in {BLOCK_SIZES}")
    return block.shape[-1]


def dct2(block) -> np.ndarray:
    """Orthonormal 2-D DCT-II over the last two axes (stacks of blocks allowed)."""
    block = np.asarray(block, dtype=np.float64)
    _check_block(block)
    return fft.dctn(block, type=2, norm="ortho", axes=(-2, -1))


def idct2(spectrum) -> np.ndarray:
    spectrum = np.asarray(spectrum, dtype=np.float64)
    _check_block(spectrum)
    return fft.idctn(spectrum, type=2, norm="ortho", axes=(-2, -1))


def qp_to_qstep(qp: float) -> float:
    """HEVC step-size law, Q = 2^((QP - 4) / 6)."""
    return float(2.0 ** ((qp - 4) / 6.0))


def flat_quant_matrix(size: int, qp: float) -> np.ndarray:
    if size not in BLOCK_SIZES:
        raise CodecError(f"unsupported block size {size}")
    return np.full((size, size), max(qp_to_qstep(qp), 1.0))


def _check_quant(spectrum: np.ndarray, q: np.ndarray) -> None:
    if q.shape != spectrum.shape[-2:]:
        raise CodecError(f"quantization matrix {q.shape} does not match spectrum {spectrum.shape[-2:]}")
    if np.any(q < 1):
        raise CodecError("quantization steps must be >= 1")


def quantize_levels(spectrum, q) -> np.ndarray:
    spectrum = np.asarray(spectrum, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    _check_quant(spectrum, q)
    return round_half_away(spectrum / q)


def quantize_spectrum(spectrum, q) -> np.ndarray:
    """ŷ = R(x̂ / Q) · Q with R rounding half away from zero."""
    return quantize_levels(spectrum, q) * np.asarray(q, dtype=np.float64)


def level_bits(levels: np.ndarray) -> int:
    """Signed exp-Golomb length of every quantized level (rate proxy)."""
    mags = np.abs(levels).astype(np.int64)
    bits = 2 * np.floor(np.log2(mags + 1)).astype(np.int64) + 1 + (mags > 0)
    return int(bits.sum())


def _to_blocks(plane: np.ndarray, p: int) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // p, p, w // p, p).swapaxes(1, 2)


def _from_blocks(blocks: np.ndarray) -> np.ndarray:
    bh, bw, p, _ = blocks.shape
    return blocks.swapaxes(1, 2).reshape(bh * p, bw * p)


def compress_frame(frame: LumaFrame, block_size: int, q) -> LumaFrame:
    """Per-block dct2 → quantize → idct2 → clip, on a uniform block grid.

    Frames whose sides are not multiples of the block size are padded by
    edge replication; the padding is stripped from the result.
    """
    q = np.asarray(q, dtype=np.float64)
    if block_size not in BLOCK_SIZES:
        raise CodecError(f"unsupported block size {block_size}")
    h, w = frame.height, frame.width
    ph, pw = -h % block_size, -w % block_size
    plane = np.pad(frame.as_float(), ((0, ph), (0, pw)), mode="edge")
    blocks = _to_blocks(plane, block_size)
    decoded = idct2(quantize_spectrum(dct2(blocks), q))
    return LumaFrame.from_float(_from_blocks(decoded)[:h, :w])


def encode_frame(frame: LumaFrame, partition: TuPartition, qp: float) -> tuple[LumaFrame, int]:
    """Transform-quantize every TU of ``partition`` with a flat step from ``qp``.

    Returns the decoded frame and the estimated bit count of the levels.
    """
    if frame.dims != partition.dims:
        raise CodecError(f"frame is {frame.width}x{frame.height}, partition is {partition.width}x{partition.height}")
    plane = frame.as_float()
    out = np.empty_like(plane)
    by_size = defaultdict(list)
    for tu in partition.tus:
        by_size[tu.size].append(tu)

    bits = 0
    for size, tus in by_size.items():
        stack = np.stack([plane[t.y:t.y + size, t.x:t.x + size] for t in tus])
        q = flat_quant_matrix(size, qp)
        levels = quantize_levels(dct2(stack), q)
        bits += level_bits(levels)
        decoded = idct2(levels * q)
        for t, block in zip(tus, decoded):
            out[t.y:t.y + size, t.x:t.x + size] = block
    return LumaFrame.from_float(out), bits


def adaptive_partition(frame: LumaFrame, qp: float, min_size: int = 4, max_size: int = 32,
                       split_scale: float = 0.5) -> TuPartition:
    """Variance-driven quadtree: blocks split while their variance exceeds split_scale · Q².

    The partition covers the frame edge-padded to the 4-pixel TU grid.
    """
    frame = frame.padded(*coded_dims(frame.dims))
    plane = frame.as_float()
    threshold = split_scale * qp_to_qstep(qp) ** 2

    def should_split(x, y, size):
        return float(plane[y:y + size, x:x + size].var()) > threshold

    return build_quadtree(frame.width, frame.height, should_split, min_size=min_size, max_size=max_size)


def simulate_sequence(frames: list, qp: float, adaptive: bool = True, block_size: int = 8) -> tuple[list, list, list]:
    """Compress a clip; returns (decoded frames, partitions, bits per frame).

    Frames off the 4-pixel grid are coded edge-padded and cropped back, so
    partitions describe the padded size.
    """
    decoded, partitions, bits = [], [], []
    for frame in frames:
        coded = frame.padded(*coded_dims(frame.dims))
        if adaptive:
            partition = adaptive_partition(coded, qp)
        else:
            partition = uniform_partition(coded.dims, block_size)
        out, nbits = encode_frame(coded, partition, qp)
        decoded.append(out.cropped(frame.width, frame.height))
        partitions.append(partition)
        bits.append(nbits)
    logger.debug(f"simulated {len(frames)} frames at QP {qp}, {sum(bits)} bits")
    return decoded, partitions, bits


# --- noise analysis ---

def noise_std_map(decoded: LumaFrame, original: LumaFrame, radius: int = 2) -> NoiseMap:
    """Standard deviation of (decoded - original) over a (2r+1)² window.

    Border pixels use the part of the window inside the frame. Sums are
    taken over integers, so a constant error field gives exactly zero.
    """
    require_same_dims(decoded.samples, original.samples, "noise_std_map")
    err = decoded.samples.astype(np.float64) - original.samples.astype(np.float64)
    kernel = np.ones((2 * radius + 1, 2 * radius + 1))
    s1 = ndimage.correlate(err, kernel, mode="constant", cval=0.0)
    s2 = ndimage.correlate(err * err, kernel, mode="constant", cval=0.0)
    n = ndimage.correlate(np.ones_like(err), kernel, mode="constant", cval=0.0)
    var = np.maximum(n * s2 - s1 * s1, 0.0) / (n * n)
    return NoiseMap(np.sqrt(var))


def temporal_noise_diff(noise_t: NoiseMap, noise_t_plus_k: NoiseMap) -> NoiseMap:
    require_same_dims(noise_t.values, noise_t_plus_k.values, "temporal_noise_diff")
    return NoiseMap(np.abs(noise_t_plus_k.values - noise_t.values))
