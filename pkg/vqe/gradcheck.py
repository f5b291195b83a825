"""Central-difference gradient oracle.

All checks run in double precision. Differences whose perturbation flips a
relu activation are retried with a smaller step, so a kink inside the
stencil does not masquerade as a wrong analytic gradient.
"""

import logging
from typing import Callable, Mapping

import numpy as np

from . import tensor as T
from .network import forward, init_params, multi_supervised_loss
from .tensor import Tape, Tensor, default_dtype, record_relu_masks

logger = logging.getLogger("vqe.gradcheck")

DEFAULT_EPS = 1e-5
KINK_RETRIES = 3


def relative_error(analytic, numeric) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def _same_pattern(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def _evaluate(fn: Callable[[np.ndarray], Tensor], arr: np.ndarray) -> tuple[float, list]:
    with record_relu_masks() as masks:
        value = fn(arr).item()
    return value, masks


def central_difference(fn: Callable[[np.ndarray], Tensor], base: np.ndarray, index: tuple, eps: float = DEFAULT_EPS) -> float:
    """d fn / d base[index], shrinking the step while a relu flips inside it."""
    _, reference = _evaluate(fn, base)
    step = eps
    for attempt in range(KINK_RETRIES + 1):
        plus = base.copy()
        plus[index] += step
        minus = base.copy()
        minus[index] -= step
        fp, mp = _evaluate(fn, plus)
        fm, mm = _evaluate(fn, minus)
        if _same_pattern(mp, reference) and _same_pattern(mm, reference):
            break
        if attempt < KINK_RETRIES:
            logger.debug(f"relu pattern changed at {index} with step {step:g}, retrying")
            step /= 10.0
    return (fp - fm) / (2.0 * step)


def _pick_coords(shape: tuple, count: int | None, rng: np.random.Generator) -> list:
    total = int(np.prod(shape))
    if count is None or count >= total:
        flat = range(total)
    else:
        flat = rng.choice(total, size=count, replace=False)
    return [np.unravel_index(int(i), shape) for i in flat]


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = DEFAULT_EPS, coords: int | None = None, seed: int = 0) -> float:
    """Max relative error between the tape gradient of scalar ``f`` at ``x`` and central differences."""
    with default_dtype(np.float64):
        base = np.array(x, dtype=np.float64)
        leaf = Tensor(base, requires_grad=True)
        with Tape() as tape:
            out = f(leaf)
        analytic = tape.backward(out, wrt=[leaf])[leaf]

        def evaluate(arr):
            return f(Tensor(arr))

        worst = 0.0
        for index in _pick_coords(base.shape, coords, np.random.default_rng(seed)):
            numeric = central_difference(evaluate, base, index, eps)
            worst = max(worst, float(relative_error(analytic[index], numeric)))
    return worst


def grad_check_params(
    loss_fn: Callable[[dict], Tensor],
    params: Mapping[str, np.ndarray],
    eps: float = DEFAULT_EPS,
    coords_per_param: int | None = None,
    seed: int = 0,
) -> dict:
    """Per-parameter max relative error for a loss over a named parameter set.

    ``coords_per_param`` samples that many coordinates of each parameter
    (all coordinates when None).
    """
    rng = np.random.default_rng(seed)
    with default_dtype(np.float64):
        base = {name: np.array(value, dtype=np.float64) for name, value in params.items()}
        leaves = {name: Tensor(value, requires_grad=True, name=name) for name, value in base.items()}
        with Tape() as tape:
            loss = loss_fn(leaves)
        grads = tape.backward(loss, wrt=list(leaves.values()))

        report = {}
        for name, value in base.items():
            analytic = grads[leaves[name]]

            def evaluate(arr, name=name):
                trial = {k: Tensor(arr if k == name else v) for k, v in base.items()}
                return loss_fn(trial)

            worst = 0.0
            for index in _pick_coords(value.shape, coords_per_param, rng):
                numeric = central_difference(evaluate, value, index, eps)
                worst = max(worst, float(relative_error(analytic[index], numeric)))
            report[name] = worst
    return report


def op_cases(rng: np.random.Generator) -> dict:
    """Scalar test functions of one tensor for every differentiable op, with fixed random operands."""
    x_shape = (2, 3, 6, 6)
    w = T.Tensor(rng.normal(size=(4, 3, 3, 3)))
    wt = T.Tensor(rng.normal(size=(3, 2, 4, 4)))
    b4 = T.Tensor(rng.normal(size=(1, 4, 1, 1)))
    b2 = T.Tensor(rng.normal(size=(1, 2, 1, 1)))
    other = T.Tensor(rng.normal(size=x_shape))
    weights = T.Tensor(rng.normal(size=x_shape))
    weights_up = T.Tensor(rng.normal(size=(2, 3, 12, 12)))
    weights_down = T.Tensor(rng.normal(size=(2, 3, 3, 3)))

    def weighted(y, p):
        return T.sum_all(T.eltwise("mul", y, p))

    return {
        "conv2d": (x_shape, lambda x: T.sum_all(T.pointwise(T.conv2d(x, w, b4, stride=2, pad=1), "tanh"))),
        "conv2d_transpose": (x_shape, lambda x: T.sum_all(T.pointwise(T.conv2d_transpose(x, wt, b2, stride=2, pad=1), "tanh"))),
        "sigmoid": (x_shape, lambda x: weighted(T.sigmoid(x), weights)),
        "tanh": (x_shape, lambda x: weighted(T.tanh(x), weights)),
        "relu": (x_shape, lambda x: weighted(T.relu(x), weights)),
        "linear": (x_shape, lambda x: weighted(T.pointwise(x, "linear"), weights)),
        "mul": (x_shape, lambda x: weighted(T.eltwise("mul", x, x), other)),
        "add": (x_shape, lambda x: T.sum_all(T.tanh(T.eltwise("add", x, other)))),
        "concat": (x_shape, lambda x: T.sum_all(T.tanh(T.concat_channels(x, T.scale(x, 2.0))))),
        "upsample": (x_shape, lambda x: weighted(T.upsample_bilinear(x, 2), weights_up)),
        "downsample": (x_shape, lambda x: weighted(T.downsample_area(x, 2), weights_down)),
        "mse": (x_shape, lambda x: T.mse(x, other)),
    }


def check_ops(seed: int = 0, eps: float = DEFAULT_EPS, coords: int | None = 24) -> dict:
    """Max relative error per differentiable op on random inputs."""
    rng = np.random.default_rng(seed)
    with default_dtype(np.float64):
        cases = op_cases(rng)
    return {name: grad_check(fn, rng.normal(size=shape), eps=eps, coords=coords, seed=seed)
            for name, (shape, fn) in cases.items()}


def check_model(config, size: int = 16, seed: int = 0, eps: float = DEFAULT_EPS, coords_per_param: int = 3) -> dict:
    """Per-parameter max relative error of the full multi-supervised loss of a randomized model.

    Every parameter (prediction heads and biases included) is randomized so
    no gradient is identically zero. Weights use a variance-preserving scale
    so activations keep their magnitude through the relu stack.
    """
    rng = np.random.default_rng(seed)
    with default_dtype(np.float64):
        params = {}
        for name, p in init_params(config, seed=seed).items():
            if name.endswith(".b"):
                params[name] = rng.uniform(-0.1, 0.1, size=p.shape)
                continue
            transposed = name.startswith(("dec.", "head.")) and name != "head.final.w"
            # a stride-2 4x4 transposed conv feeds each output from in_channels * 4 taps
            fan_in = p.shape[0] * 4 if transposed else int(np.prod(p.shape[1:]))
            params[name] = rng.uniform(-1.0, 1.0, size=p.shape) * np.sqrt(6.0 / fan_in)
        window = [Tensor(rng.uniform(0, 1, size=(1, 1, size, size))) for _ in range(config.window)]
        guide = Tensor(rng.uniform(0, 1, size=(1, 1, size, size))) if config.guidance else None
        target = Tensor(rng.uniform(0, 1, size=(1, 1, size, size)))

    def loss_fn(leaves):
        final, intermediates = forward(leaves, config, window, guide)
        return multi_supervised_loss(final, intermediates, target)[0]

    return grad_check_params(loss_fn, params, eps=eps, coords_per_param=coords_per_param, seed=seed)
