"""Training loop: multi-supervised loss, Adam, step-decayed learning rate.

One fixed pool of patches is drawn per run; every epoch visits the pool in a
(seed, epoch)-determined order. Batches may be prepared on a producer thread,
parameter updates always happen on the calling thread in batch order.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import crud
from .checkpoint import load_checkpoint, save_checkpoint
from .data import FramePairSet, epoch_batches, make_batch, prefetch, sample_patches
from .database import get_db
from .errors import ConfigError, TrainingDiverged
from .frames import LumaFrame
from .metrics import psnr
from .network import count_parameters, enhance_window, forward, init_params, multi_supervised_loss
from .optim import AdamState, adam_step, step_decay_lr
from .schemas import LossRecord, ModelConfig, TrainConfig
from .tensor import Tape

logger = logging.getLogger("vqe.training")
train_logger = logging.getLogger("vqe.train")

CHECKPOINT_NAME = "checkpoint.vqec"
LOSS_LOG_NAME = "loss.csv"


@dataclass
class TrainResult:
    config: ModelConfig
    params: dict
    losses: list = field(default_factory=list)
    checkpoint_path: Path | None = None
    run_id: int | None = None

    @property
    def initial_loss(self) -> float:
        return self.losses[0].total

    @property
    def final_loss(self) -> float:
        return self.losses[-1].total


def initial_params(config: TrainConfig, init_from=None) -> dict:
    model_config = config.to_model_config()
    if init_from is None:
        return init_params(model_config, seed=config.seed)
    ckpt = load_checkpoint(init_from)
    if ckpt.config != model_config:
        raise ConfigError(f"checkpoint {init_from} was trained with {ckpt.config.model_dump()}, "
                          f"run asks for {model_config.model_dump()}")
    logger.info(f"fine-tuning from {init_from}")
    return ckpt.params


def collect_samples(config: TrainConfig, data: Sequence[FramePairSet]) -> list:
    """``samples_per_epoch`` patches spread evenly over the pair sets."""
    if not data:
        raise ConfigError("training needs at least one frame pair set")
    share, extra = divmod(config.samples_per_epoch, len(data))
    samples = []
    for i, pairs in enumerate(data):
        count = share + (1 if i < extra else 0)
        if count:
            samples += sample_patches(pairs, config.temporal_radius, config.patch_size, count,
                                      seed=config.seed + i, guidance=config.guidance)
    return samples


def _write_loss_row(writer, record: LossRecord) -> None:
    writer.writerow([record.step, record.epoch, repr(record.lr), repr(record.total), repr(record.final)]
                    + [repr(h) for h in record.intermediates])


def train(config: TrainConfig, data, out_dir, init_from=None, ledger_url: str | None = None) -> TrainResult:
    data = [data] if isinstance(data, FramePairSet) else list(data)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / CHECKPOINT_NAME

    model_config = config.to_model_config()
    params = initial_params(config, init_from)
    samples = collect_samples(config, data)
    state = AdamState.for_params(params)
    logger.info(f"training {model_config.fusion} model, {count_parameters(params)} parameters, "
                f"{len(samples)} patches of {config.patch_size}x{config.patch_size}, {config.epochs} epochs")

    result = TrainResult(config=model_config, params=params)
    with get_db(ledger_url) as db, open(out_dir / LOSS_LOG_NAME, "w", newline="") as log_file:
        run = crud.create_run(db, config) if db is not None else None
        result.run_id = run.id if run is not None else None
        writer = csv.writer(log_file)
        writer.writerow(["step", "epoch", "lr", "total", "final", "h1", "h2", "h3"])
        try:
            step, lr = 0, None
            for epoch in range(config.epochs):
                new_lr = step_decay_lr(config.lr, epoch, config.lr_decay_epoch, config.lr_decay_factor)
                if new_lr != lr:
                    train_logger.info(f"epoch {epoch}: learning rate {new_lr:.3g}")
                    lr = new_lr
                batches = epoch_batches(samples, config.batch_size, config.seed, epoch)
                for batch in prefetch(batches, config.prefetch):
                    with Tape() as tape:
                        final, intermediates = forward(params, model_config, batch.window, batch.guide)
                        loss, breakdown = multi_supervised_loss(final, intermediates, batch.target)
                    if not math.isfinite(breakdown.total):
                        raise TrainingDiverged(f"loss became {breakdown.total} at step {step}; "
                                               f"last good checkpoint: {checkpoint_path if checkpoint_path.exists() else 'none'}")
                    grads = tape.backward(loss, wrt=list(params.values()))
                    params, state = adam_step(params, {name: grads[p] for name, p in params.items()}, state, lr=lr,
                                              beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps)
                    record = LossRecord(step=step, epoch=epoch, lr=lr, total=breakdown.total,
                                        final=breakdown.final, intermediates=breakdown.intermediates)
                    result.losses.append(record)
                    _write_loss_row(writer, record)
                    if run is not None:
                        crud.log_step(db, run, record)
                    train_logger.info(f"epoch {epoch} step {step} lr {lr:.3g} loss {record.total:.6f} "
                                      f"final {record.final:.6f} H {' '.join(f'{h:.6f}' for h in record.intermediates)}")
                    step += 1
                if (epoch + 1) % config.checkpoint_every == 0 or epoch + 1 == config.epochs:
                    save_checkpoint(checkpoint_path, model_config, params,
                                    meta={"epoch": epoch, "step": step, "loss": result.losses[-1].total})
        except TrainingDiverged:
            if run is not None:
                crud.finish_run(db, run, "diverged", checkpoint_path=str(checkpoint_path) if checkpoint_path.exists() else None)
            raise
        except Exception:
            if run is not None:
                crud.finish_run(db, run, "failed")
            raise

        result.params = params
        result.checkpoint_path = checkpoint_path
        if run is not None:
            crud.finish_run(db, run, "finished", final_loss=result.final_loss, checkpoint_path=str(checkpoint_path))
    logger.info(f"training done: loss {result.initial_loss:.6f} -> {result.final_loss:.6f}, checkpoint {checkpoint_path}")
    return result


def sample_delta_psnr(result: TrainResult, samples: Sequence) -> float:
    """Mean ΔPSNR of the trained model over training patches (8-bit domain)."""
    batch = make_batch(samples)
    out = enhance_window(result.params, result.config, batch.window, batch.guide)
    center = batch.window[len(batch.window) // 2].data
    deltas = []
    for i in range(batch.size):
        raw = LumaFrame.from_float(batch.target.data[i, 0].astype(np.float64) * 255.0)
        compressed = LumaFrame.from_float(center[i, 0].astype(np.float64) * 255.0)
        enhanced = LumaFrame.from_float(out[i, 0].astype(np.float64) * 255.0)
        deltas.append(psnr(enhanced, raw) - psnr(compressed, raw))
    return float(np.mean(deltas))
