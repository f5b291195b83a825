import csv
from datetime import datetime
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

FUSION_MODES = ("brclstm", "bclstm", "early", "slow")
Fusion = Literal["brclstm", "bclstm", "early", "slow"]

# full-width channel plan of the guided encoder-decoder
ENCODER_CHANNELS = (128, 128, 256, 256, 512, 512, 1024, 1024)
DECODER_CHANNELS = (512, 256, 128, 64)
FEATURE_CHANNELS = 64


# --- Model / training configuration ---

class ModelConfig(BaseModel):
    width: float = Field(1.0, gt=0)
    lstm_layers: int = Field(2, ge=1)
    temporal_radius: int = Field(1, ge=0)
    fusion: Fusion = "brclstm"
    guidance: bool = True

    @model_validator(mode="after")
    def check_width(self):
        for base in (FEATURE_CHANNELS,) + ENCODER_CHANNELS + DECODER_CHANNELS:
            scaled = base * self.width
            if scaled < 1 or abs(scaled - round(scaled)) > 1e-9:
                raise ValueError(f"width {self.width} gives a non-integer channel count for {base}")
        if round(FEATURE_CHANNELS * self.width) % 2:
            raise ValueError(f"width {self.width} gives an odd feature channel count; BRCLSTM splits it in half")
        return self

    def _scale(self, base: int) -> int:
        return int(round(base * self.width))

    @property
    def feature_channels(self) -> int:
        return self._scale(FEATURE_CHANNELS)

    @property
    def encoder_channels(self) -> tuple:
        return tuple(self._scale(c) for c in ENCODER_CHANNELS)

    @property
    def decoder_channels(self) -> tuple:
        return tuple(self._scale(c) for c in DECODER_CHANNELS)

    @property
    def window(self) -> int:
        return 2 * self.temporal_radius + 1


class TrainConfig(BaseModel):
    patch_size: int = Field(96, ge=16)
    batch_size: int = Field(8, ge=1)
    lr: float = Field(1e-4, ge=0)
    lr_decay_epoch: int = Field(15, ge=0)
    lr_decay_factor: float = Field(0.1, gt=0)
    epochs: int = Field(30, ge=1)
    temporal_radius: int = Field(1, ge=0)
    width: float = Field(1.0, gt=0)
    lstm_layers: int = Field(2, ge=1)
    fusion: Fusion = "brclstm"
    guidance: bool = True
    seed: int = 0
    qp: int = 37
    samples_per_epoch: int = Field(64, ge=1)
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    prefetch: int = Field(2, ge=0)
    checkpoint_every: int = Field(1, ge=1)

    @field_validator("patch_size")
    @classmethod
    def check_patch(cls, value):
        if value % 16:
            raise ValueError(f"patch_size must be divisible by 16 (four stride-2 stages), got {value}")
        return value

    def to_model_config(self) -> ModelConfig:
        return ModelConfig(width=self.width, lstm_layers=self.lstm_layers,
                           temporal_radius=self.temporal_radius, fusion=self.fusion,
                           guidance=self.guidance)


# --- Rate-distortion ---

class RdPoint(BaseModel):
    kbps: float = Field(gt=0)
    psnr: float
    qp: Optional[float] = None


class RdCurve(BaseModel):
    label: str = "curve"
    points: List[RdPoint]

    @model_validator(mode="after")
    def check_monotone(self):
        if len(self.points) < 4:
            raise ValueError(f"RD curve {self.label!r} needs at least 4 points, got {len(self.points)}")
        rates = [p.kbps for p in self.points]
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError(f"RD curve {self.label!r}: rates must be strictly increasing")
        quality = [p.psnr for p in self.points]
        if any(b < a for a, b in zip(quality, quality[1:])):
            raise ValueError(f"RD curve {self.label!r}: quality decreases with rate")
        return self

    def scaled(self, rate_factor: float, label: Optional[str] = None) -> "RdCurve":
        return RdCurve(label=label or self.label,
                       points=[RdPoint(kbps=p.kbps * rate_factor, psnr=p.psnr, qp=p.qp) for p in self.points])


# --- Evaluation ---

class FrameEval(BaseModel):
    index: int
    psnr_compressed: float
    psnr_enhanced: float
    delta_psnr: float
    ms: Optional[float] = None


class EvalReport(BaseModel):
    sequence: str = "sequence"
    qp: Optional[str] = None
    frames: List[FrameEval] = []

    @property
    def mean_psnr_compressed(self) -> float:
        return float(np.mean([f.psnr_compressed for f in self.frames])) if self.frames else 0.0

    @property
    def mean_psnr_enhanced(self) -> float:
        return float(np.mean([f.psnr_enhanced for f in self.frames])) if self.frames else 0.0

    @property
    def mean_delta_psnr(self) -> float:
        return float(np.mean([f.delta_psnr for f in self.frames])) if self.frames else 0.0

    @property
    def std_psnr_compressed(self) -> float:
        return float(np.std([f.psnr_compressed for f in self.frames])) if self.frames else 0.0

    @property
    def std_psnr_enhanced(self) -> float:
        return float(np.std([f.psnr_enhanced for f in self.frames])) if self.frames else 0.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["frame", "psnr_compressed", "psnr_enhanced", "delta_psnr", "ms"])
            for f in self.frames:
                writer.writerow([f.index, repr(f.psnr_compressed), repr(f.psnr_enhanced),
                                 repr(f.delta_psnr), "" if f.ms is None else f"{f.ms:.3f}"])
            writer.writerow(["mean", repr(self.mean_psnr_compressed), repr(self.mean_psnr_enhanced),
                             repr(self.mean_delta_psnr), ""])
            writer.writerow(["std", repr(self.std_psnr_compressed), repr(self.std_psnr_enhanced), "", ""])


class RobustnessRow(BaseModel):
    qp: str
    frames: int
    mean_psnr_compressed: float
    mean_psnr_enhanced: float
    mean_delta_psnr: float


# --- Run ledger ---

class LossRecord(BaseModel):
    step: int
    epoch: int
    lr: float
    total: float
    final: float
    intermediates: List[float] = []

    model_config = ConfigDict(from_attributes=True)


class RunSummary(BaseModel):
    id: int
    started_at: Optional[datetime] = None
    finished_at: Optional[datetime] = None
    status: str
    qp: Optional[int] = None
    final_loss: Optional[float] = None
    checkpoint_path: Optional[str] = None

    model_config = ConfigDict(from_attributes=True)


class EvalSummary(BaseModel):
    id: int
    run_id: Optional[int] = None
    sequence: str
    qp: Optional[str] = None
    frames: int
    mean_psnr_compressed: float
    mean_psnr_enhanced: float
    mean_delta_psnr: float

    model_config = ConfigDict(from_attributes=True)
