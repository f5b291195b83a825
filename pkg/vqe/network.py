"""Guided enhancement network: temporal encoder, shared-weight guided encoder-decoder, multi-supervised loss.

Parameters live in a flat ``dict`` name -> leaf :class:`Tensor`. Every layer
looks its weights up by name on each call, so the guided and the main
encoder channel read the very same tensors and an optimizer step that
replaces a tensor in the dict updates both channels at once.

Shapes for a P×P patch (full width): temporal features 64×P², encoder
stages 128×(P/2)², 256×(P/4)², 512×(P/8)², 1024×(P/16)², decoder stages
512×(P/8)², 256×(P/4)², 128×(P/2)², 64×P², intermediate predictions at
P/4, P/2 and P, final prediction at P.
"""

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .schemas import ModelConfig
from .tensor import (Tensor, concat_channels, conv2d, conv2d_transpose, downsample_area, eltwise, mse,
                     relu, scale, sigmoid, split_channels, tanh, upsample_bilinear, zeros)

logger = logging.getLogger("vqe.network")

STAGES = 4
LOSS_WEIGHTS = tuple(2.0 ** -i for i in range(1, STAGES))  # 2^-i, coarsest first
DIRECTIONS = ("fwd", "bwd")


@dataclass
class GateStack:
    forget: Tensor
    input: Tensor
    output: Tensor
    candidate: Tensor


@dataclass
class FeaturePyramid:
    """Encoder features; ``guided[0]`` is the full-resolution guide projection, ``guided[k]`` follows strided layer k."""

    main: list
    guided: list = field(default_factory=list)
    strided: list = field(default_factory=list)


@dataclass
class LossBreakdown:
    total: float
    final: float
    intermediates: list
    weights: tuple = LOSS_WEIGHTS

    def recomputed_total(self) -> float:
        return self.final + sum(w * h for w, h in zip(self.weights, self.intermediates))


# --- layer plan ---

def _encoder_plan(config: ModelConfig) -> list:
    """(name, kernel, stride, in, out) for the 8 shared encoder convs."""
    chans = config.encoder_channels
    rows, cin = [], config.feature_channels
    for k, cout in enumerate(chans, start=1):
        strided = k % 2 == 1
        kernel = 7 if k == 1 else 3
        rows.append((f"enc.{k}", kernel, 2 if strided else 1, cin, cout))
        cin = cout
    return rows


def _decoder_plan(config: ModelConfig) -> list:
    """(name, kind, kernel, stride, in, out) for the decoder stages and prediction heads."""
    enc = config.encoder_channels
    dec = config.decoder_channels
    skips = (None, enc[5], enc[3], enc[1])
    rows = []
    cin = enc[7]
    for stage in range(STAGES):
        extra = 0
        if stage >= 1:
            extra += skips[stage]
        if stage >= 2:
            extra += 1  # intermediate prediction from two stages back
        rows.append((f"dec.{stage + 1}", "deconv", 4, 2, cin + extra, dec[stage]))
        if stage < STAGES - 1:
            rows.append((f"head.{stage + 1}", "deconv", 4, 2, dec[stage], 1))
        cin = dec[stage]
    rows.append(("head.final", "conv", 3, 1, dec[-1] + 1, 1))
    return rows


def layer_table(config: ModelConfig) -> list:
    """Rows (name, kind, kernel, stride, in_channels, out_channels) of the encoder-decoder."""
    rows = [(name, "conv", k, s, cin, cout) for name, k, s, cin, cout in _encoder_plan(config)]
    return rows + _decoder_plan(config)


def receptive_radius(config: ModelConfig) -> int:
    """Upper bound, in input pixels, on how far from itself an output pixel can see.

    A recurrent layer over 2T+1 frames widens the field by at most two
    3×3 convs per time step. Intermediate heads run beside the next decoder
    stage at the same scale and never widen it further.
    """
    if config.fusion == "early":
        radius = 2
    elif config.fusion == "slow":
        radius = 1 + 2 * config.temporal_radius
    else:
        radius = 1 + config.lstm_layers * 2 * config.window
    jump = 1
    for name, kind, k, s, _, _ in layer_table(config):
        if name.startswith("head.") and name != "head.final":
            continue
        radius += (k // 2) * jump
        jump = jump * s if kind == "conv" else jump // s
    return radius


# --- parameters ---

def _uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig, seed: int = 0, dtype=None) -> dict:
    """Deterministic initial parameters.

    Weights are uniform in ±sqrt(1/fan_in), biases zero, and every prediction
    head is zero so a fresh model returns its input frame unchanged.
    """
    if not isinstance(config, ModelConfig):
        raise ConfigError(f"init_params needs a ModelConfig, got {type(config).__name__}")
    rng = np.random.default_rng(seed)
    params: dict = {}
    c = config.feature_channels

    def conv(name, cout, cin, k, zero=False):
        w = np.zeros((cout, cin, k, k)) if zero else _uniform(rng, (cout, cin, k, k), cin * k * k)
        params[f"{name}.w"] = Tensor(w, requires_grad=True, dtype=dtype, name=f"{name}.w")
        params[f"{name}.b"] = Tensor(np.zeros((1, cout, 1, 1)), requires_grad=True, dtype=dtype, name=f"{name}.b")

    def deconv(name, cin, cout, k, zero=False):
        w = np.zeros((cin, cout, k, k)) if zero else _uniform(rng, (cin, cout, k, k), cin * k * k)
        params[f"{name}.w"] = Tensor(w, requires_grad=True, dtype=dtype, name=f"{name}.w")
        params[f"{name}.b"] = Tensor(np.zeros((1, cout, 1, 1)), requires_grad=True, dtype=dtype, name=f"{name}.b")

    if config.fusion in ("brclstm", "bclstm", "slow"):
        conv("net_i", c, 1, 3)
    if config.fusion in ("brclstm", "bclstm"):
        h = c // 2
        for layer in range(1, config.lstm_layers + 1):
            for direction in DIRECTIONS:
                name = f"lstm{layer}.{direction}"
                params[f"{name}.U"] = Tensor(_uniform(rng, (4 * h, c, 3, 3), c * 9), requires_grad=True, dtype=dtype, name=f"{name}.U")
                params[f"{name}.V"] = Tensor(_uniform(rng, (4 * h, h, 3, 3), h * 9), requires_grad=True, dtype=dtype, name=f"{name}.V")
                params[f"{name}.b"] = Tensor(np.zeros((1, 4 * h, 1, 1)), requires_grad=True, dtype=dtype, name=f"{name}.b")
    elif config.fusion == "early":
        conv("early.1", c, config.window, 3)
        conv("early.2", c, c, 3)
    elif config.fusion == "slow":
        for level in range(1, 2 * config.temporal_radius + 1):
            conv(f"slow.{level}", c, 2 * c, 3)

    if config.guidance:
        conv("guide", c, 1, 3)
    for name, k, _, cin, cout in _encoder_plan(config):
        conv(name, cout, cin, k)
    for name, kind, k, _, cin, cout in _decoder_plan(config):
        is_head = name.startswith("head.")
        if kind == "deconv":
            deconv(name, cin, cout, k, zero=is_head)
        else:
            conv(name, cout, cin, k, zero=is_head)
    return params


def count_parameters(params: dict) -> int:
    return int(sum(p.data.size for p in params.values()))


def _conv(params: dict, name: str, x: Tensor, stride: int = 1, pad: int = 1) -> Tensor:
    return conv2d(x, params[f"{name}.w"], params[f"{name}.b"], stride=stride, pad=pad)


def _deconv(params: dict, name: str, x: Tensor) -> Tensor:
    return conv2d_transpose(x, params[f"{name}.w"], params[f"{name}.b"], stride=2, pad=1)


# --- temporal encoder ---

def brclstm_cell_step(z: Tensor, prev: tuple, dirparams: tuple, return_gates: bool = False):
    """One ConvLSTM step: gates from conv(z) + conv(H_prev) + b, then the cell and hidden updates.

    ``prev`` is (C, H) and ``dirparams`` is (U, V, b). Returns (ĥ, (C, ĥ)) and,
    with ``return_gates``, the GateStack as a third element.
    """
    u, v, b = dirparams
    c_prev, h_prev = prev
    hidden = v.shape[1]
    if u.shape[0] != 4 * hidden or v.shape[0] != 4 * hidden:
        raise ShapeError(f"gate weights must produce 4x{hidden} channels, got U {u.shape}, V {v.shape}")
    if c_prev.shape != h_prev.shape or h_prev.shape[1] != hidden:
        raise ShapeError(f"state shapes {c_prev.shape}/{h_prev.shape} do not match {hidden} hidden channels")

    gates = eltwise("add", conv2d(z, u, b, stride=1, pad=1), conv2d(h_prev, v, None, stride=1, pad=1))
    f_pre, i_pre, o_pre, c_pre = split_channels(gates, [hidden] * 4)
    stack = GateStack(forget=sigmoid(f_pre), input=sigmoid(i_pre), output=sigmoid(o_pre), candidate=tanh(c_pre))
    cell = eltwise("add", eltwise("mul", stack.forget, c_prev), eltwise("mul", stack.input, stack.candidate))
    h_hat = eltwise("mul", stack.output, tanh(cell))
    if return_gates:
        return h_hat, (cell, h_hat), stack
    return h_hat, (cell, h_hat)


def _direction_params(params: dict, layer: int, direction: str) -> tuple:
    name = f"lstm{layer}.{direction}"
    return params[f"{name}.U"], params[f"{name}.V"], params[f"{name}.b"]


def brclstm_layer(seq: Sequence[Tensor], fwd: tuple, bwd: tuple, residual: bool = True) -> list:
    """Run both directions over the sequence with zero initial states.

    h_t = concat(ĥ⁺_t, ĥ⁻_t), plus z_t when ``residual`` is set.
    """
    if not seq:
        raise ShapeError("brclstm_layer needs a non-empty sequence")
    shape = seq[0].shape
    if any(z.shape != shape for z in seq):
        raise ShapeError("all sequence tensors must share one shape")
    n, c, hgt, wid = shape
    hidden = fwd[1].shape[1]
    if 2 * hidden != c:
        raise ShapeError(f"two directions of {hidden} hidden channels cannot match {c} input channels")

    def run(params, order):
        state = (zeros((n, hidden, hgt, wid), dtype=seq[0].dtype), zeros((n, hidden, hgt, wid), dtype=seq[0].dtype))
        out = {}
        for t in order:
            out[t], state = brclstm_cell_step(seq[t], state, params)
        return out

    forward = run(fwd, range(len(seq)))
    backward = run(bwd, reversed(range(len(seq))))
    result = []
    for t, z in enumerate(seq):
        h = concat_channels(forward[t], backward[t])
        result.append(eltwise("add", h, z) if residual else h)
    return result


def temporal_encoder(window: Sequence[Tensor], params: dict, config: ModelConfig) -> Tensor:
    """Features of the centre frame from a window of 2T+1 normalized frames."""
    if len(window) % 2 == 0:
        raise ShapeError(f"temporal window must have odd length, got {len(window)}")
    if len(window) != config.window:
        raise ShapeError(f"model expects {config.window} frames (T={config.temporal_radius}), got {len(window)}")
    center = len(window) // 2

    if config.fusion == "early":
        x = relu(_conv(params, "early.1", concat_channels(*window)))
        return relu(_conv(params, "early.2", x))

    feats = [relu(_conv(params, "net_i", frame)) for frame in window]
    if config.fusion == "slow":
        level = 1
        while len(feats) > 1:
            feats = [relu(_conv(params, f"slow.{level}", concat_channels(a, b))) for a, b in zip(feats, feats[1:])]
            level += 1
        return feats[0]

    residual = config.fusion == "brclstm"
    for layer in range(1, config.lstm_layers + 1):
        feats = brclstm_layer(feats, _direction_params(params, layer, "fwd"),
                              _direction_params(params, layer, "bwd"), residual=residual)
    return feats[center]


# --- guided encoder-decoder ---

def encode(params: dict, x: Tensor, guides: Sequence[Tensor] | None = None) -> tuple[list, list]:
    """Shared 8-layer encoder.

    Returns (stage outputs, activations after each strided layer). With
    ``guides`` (one per strided layer) each strided activation is summed with its guide
    before the stage's second conv.
    """
    stage_out, strided = [], []
    for stage in range(STAGES):
        first, second = 2 * stage + 1, 2 * stage + 2
        kernel = params[f"enc.{first}.w"].shape[2]
        a = relu(_conv(params, f"enc.{first}", x, stride=2, pad=kernel // 2))
        strided.append(a)
        if guides is not None:
            if guides[stage].shape != a.shape:
                raise ShapeError(f"guide {stage + 2} has shape {guides[stage].shape}, activation has {a.shape}")
            a = eltwise("add", a, guides[stage])
        x = relu(_conv(params, f"enc.{second}", a))
        stage_out.append(x)
    return stage_out, strided


def shared_guided_encoder(main_in: Tensor, guide_map: Tensor | None, params: dict) -> FeaturePyramid:
    """Two-channel encoder with shared weights; the guided channel steers the main one by summation."""
    if guide_map is None:
        main, strided = encode(params, main_in)
        return FeaturePyramid(main=main, strided=strided)
    if guide_map.shape[1] != 1:
        raise ShapeError(f"guide map must have one channel, got {guide_map.shape[1]}")
    if guide_map.shape[0] != main_in.shape[0] or guide_map.shape[2:] != main_in.shape[2:]:
        raise ShapeError(f"guide map {guide_map.shape} does not match main input {main_in.shape}")

    g1 = relu(_conv(params, "guide", guide_map))
    _, guided_strided = encode(params, g1)
    main, strided = encode(params, eltwise("add", main_in, g1), guides=guided_strided)
    return FeaturePyramid(main=main, guided=[g1] + guided_strided, strided=strided)


def _check_pyramid(pyramid: FeaturePyramid) -> None:
    if len(pyramid.main) != STAGES:
        raise ShapeError(f"pyramid has {len(pyramid.main)} stages, expected {STAGES}")
    for finer, coarser in zip(pyramid.main, pyramid.main[1:]):
        if finer.shape[2] != 2 * coarser.shape[2] or finer.shape[3] != 2 * coarser.shape[3]:
            raise ShapeError(f"encoder stages {finer.shape} and {coarser.shape} are not a factor 2 apart")


def guided_decoder(pyramid: FeaturePyramid, params: dict, target: Tensor) -> tuple[Tensor, list]:
    """Decoder with skips and intermediate predictions.

    Predictions are residuals on the (area-downsampled) compressed target, so
    zero heads reproduce the target. Returns (final, [coarsest … finest]).
    """
    _check_pyramid(pyramid)
    n, _, height, width = target.shape
    top = pyramid.main[0]
    if (top.shape[2] * 2, top.shape[3] * 2) != (height, width):
        raise ShapeError(f"target {target.shape} does not match encoder input size for {top.shape}")

    skips = [None, pyramid.main[2], pyramid.main[1], pyramid.main[0]]
    x = pyramid.main[3]
    predictions = []
    for stage in range(STAGES):
        parts = [x]
        if skips[stage] is not None:
            parts.append(skips[stage])
        if stage >= 2:
            parts.append(predictions[stage - 2])
        x = relu(_deconv(params, f"dec.{stage + 1}", concat_channels(*parts) if len(parts) > 1 else x))
        if stage < STAGES - 1:
            residual = _deconv(params, f"head.{stage + 1}", x)
            factor = height // residual.shape[2]
            base = downsample_area(target, factor) if factor > 1 else target
            predictions.append(eltwise("add", residual, base))
    residual = _conv(params, "head.final", concat_channels(x, predictions[-1]))
    return eltwise("add", residual, target), predictions


def forward(params: dict, config: ModelConfig, window: Sequence[Tensor], guide: Tensor | None = None) -> tuple[Tensor, list]:
    """Unclipped prediction for the centre frame of ``window``."""
    target = window[len(window) // 2]
    if target.shape[2] % 16 or target.shape[3] % 16:
        raise ShapeError(f"input {target.shape[2]}x{target.shape[3]} is not divisible by 16")
    if config.guidance and guide is None:
        raise ShapeError("model was built with guidance; a guide map is required")
    features = temporal_encoder(window, params, config)
    pyramid = shared_guided_encoder(features, guide if config.guidance else None, params)
    return guided_decoder(pyramid, params, target)


def multi_supervised_loss(final: Tensor, intermediates: Sequence[Tensor], ground_truth: Tensor) -> tuple[Tensor, LossBreakdown]:
    """L = L_final + Σ 2^-i · H_i, each term an MSE at full resolution."""
    final_term = mse(final, ground_truth)
    total = final_term
    terms = []
    for i, pred in enumerate(intermediates, start=1):
        factor = ground_truth.shape[2] // pred.shape[2]
        up = upsample_bilinear(pred, factor) if factor > 1 else pred
        if up.shape != ground_truth.shape:
            raise ShapeError(f"intermediate {i} upsamples to {up.shape}, ground truth is {ground_truth.shape}")
        term = mse(up, ground_truth)
        terms.append(term)
        total = eltwise("add", total, scale(term, 2.0 ** -i))
    breakdown = LossBreakdown(total=total.item(), final=final_term.item(), intermediates=[t.item() for t in terms],
                              weights=tuple(2.0 ** -i for i in range(1, len(terms) + 1)))
    return total, breakdown


def enhance_window(params: dict, config: ModelConfig, window: Sequence[Tensor], guide: Tensor | None = None) -> np.ndarray:
    """Inference output clipped to [0, 1], shape (N, 1, H, W)."""
    final, _ = forward(params, config, window, guide)
    return np.clip(final.data, 0.0, 1.0)
