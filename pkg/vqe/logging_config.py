import logging
import os
import sys

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(level=None):
    level = level or os.getenv("VQE_LOG_LEVEL", "INFO")
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO

    # Prevent duplicate loggers
    for handler in logging.root.handlers[:]:
        logging.root.removeHandler(handler)

    logging.basicConfig(
        level=level,
        format=LOG_FORMAT,
        stream=sys.stdout,
        force=True
    )

    logger = logging.getLogger("vqe")
    logger.setLevel(level)
    logger.propagate = False

    formatter = logging.Formatter(LOG_FORMAT)

    # Clear any existing handlers and add our stdout handler
    logger.handlers = []
    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(formatter)
    logger.addHandler(handler)

    # Training progress gets its own logger so step logs can be silenced separately
    train_logger = logging.getLogger("vqe.train")
    train_logger.setLevel(level)
    train_logger.propagate = False
    train_logger.handlers = []
    train_logger.addHandler(handler)

    return logger, train_logger
