import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vqe.gradcheck import check_model, central_difference, grad_check, op_cases, relative_error
from vqe.schemas import ModelConfig
from vqe.tensor import Tensor, default_dtype, relu, sum_all

TOLERANCE = 1e-4
OPS = sorted(op_cases(np.random.default_rng(0)))


@pytest.mark.parametrize("op", OPS)
@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_op_gradients_match_central_differences(op, seed):
    rng = np.random.default_rng(seed)
    with default_dtype(np.float64):
        shape, fn = op_cases(rng)[op]
    err = grad_check(fn, rng.normal(size=shape), eps=1e-5, coords=12, seed=seed)
    assert err < TOLERANCE


def test_relative_error_has_denominator_floor():
    assert relative_error(0.0, 1e-12) == pytest.approx(1e-4)


def test_kink_retry_recovers_one_sided_slope():
    base = np.zeros((1, 1, 1, 1))
    base[0, 0, 0, 0] = 5e-6

    def f(arr):
        return sum_all(relu(Tensor(arr, dtype=np.float64)))

    assert central_difference(f, base, (0, 0, 0, 0), eps=1e-5) == pytest.approx(1.0)


@pytest.mark.parametrize("fusion,guidance", [("brclstm", True), ("bclstm", True), ("early", True),
                                             ("slow", True), ("brclstm", False)])
def test_full_model_gradients(fusion, guidance):
    config = ModelConfig(width=1 / 16, temporal_radius=1, lstm_layers=2, fusion=fusion, guidance=guidance)
    report = check_model(config, size=16, seed=3, coords_per_param=2)
    worst = max(report, key=report.get)
    assert report[worst] < TOLERANCE, worst
