import logging

import numpy as np
import pytest

from vqe.data import simulated_pairs, synthetic_clip
from vqe.network import init_params
from vqe.schemas import ModelConfig
from vqe.tensor import default_dtype


@pytest.fixture(autouse=True)
def no_default_ledger(monkeypatch):
    """Keep tests from writing the default sqlite ledger into the working directory."""
    monkeypatch.setenv("DATABASE_URL", "")


@pytest.fixture(autouse=True)
def reset_vqe_loggers():
    """setup_logging detaches the package loggers from root; reattach them so caplog sees records."""
    yield
    for name in ("vqe", "vqe.train"):
        logger = logging.getLogger(name)
        logger.handlers = []
        logger.propagate = True
        logger.setLevel(logging.NOTSET)


@pytest.fixture
def f64():
    with default_dtype(np.float64):
        yield


@pytest.fixture
def tiny_config():
    return ModelConfig(width=1 / 16, temporal_radius=1, lstm_layers=2)


@pytest.fixture
def toy_config():
    return ModelConfig(width=1 / 8, temporal_radius=1, lstm_layers=2)


@pytest.fixture
def clip():
    return synthetic_clip(4, 32, 32, seed=0)


@pytest.fixture
def pairs(clip):
    return simulated_pairs(clip, 37)


@pytest.fixture
def ledger_url(tmp_path):
    return f"sqlite:///{tmp_path / 'runs.db'}"


@pytest.fixture
def random_model():
    """Builds parameters with heads and biases redrawn too, so no path is an identity."""
    def build(config, seed=0):
        params = init_params(config, seed=seed)
        rng = np.random.default_rng(seed + 1)
        for p in params.values():
            if not p.data.any():
                p.data[...] = rng.uniform(-0.1, 0.1, size=p.shape)
        return params
    return build
