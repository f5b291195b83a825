import logging
import os

import numpy as np
from dotenv import dotenv_values, load_dotenv
from pydantic import ValidationError

from .errors import ConfigError
from .schemas import TrainConfig

logger = logging.getLogger("vqe.config")

DEFAULT_DATABASE_URL = "sqlite:///./vqe_runs.db"
DTYPES = {"float32": np.float32, "float64": np.float64}


def load_environment() -> None:
    """Load a ``.env`` file from the working directory, if present."""
    load_dotenv()


def database_url() -> str | None:
    """Run ledger URL; an empty DATABASE_URL disables the ledger."""
    url = os.getenv("DATABASE_URL", DEFAULT_DATABASE_URL)
    return url or None


def compute_dtype():
    name = os.getenv("VQE_DTYPE", "float32")
    if name not in DTYPES:
        raise ConfigError(f"VQE_DTYPE must be one of {sorted(DTYPES)}, got {name!r}")
    return DTYPES[name]


def _validation_detail(exc: ValidationError) -> str:
    first = exc.errors()[0]
    where = ".".join(str(part) for part in first.get("loc", ())) or "config"
    return f"{where}: {first.get('msg')}"


def read_config_file(path) -> dict:
    """Flat ``key = value`` file, ``#`` comments; unknown keys are rejected."""
    if not os.path.exists(path):
        raise ConfigError(f"config file {path} does not exist")
    values = {k: v for k, v in dotenv_values(path).items() if v is not None}
    unknown = sorted(set(values) - set(TrainConfig.model_fields))
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {', '.join(unknown)}")
    return values


def build_train_config(path=None, **overrides) -> TrainConfig:
    """File values first, then explicit overrides (``None`` overrides are ignored)."""
    values = read_config_file(path) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        config = TrainConfig(**values)
    except ValidationError as exc:
        raise ConfigError(_validation_detail(exc)) from exc
    logger.debug(f"training config: {config.model_dump()}")
    return config
