from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, JSON, String
from sqlalchemy.orm import relationship
from sqlalchemy.sql import func  # for server_default=func.now()

from .database import Base


class TrainingRun(Base):
    __tablename__ = "training_runs"

    id = Column(Integer, primary_key=True, index=True)
    started_at = Column(DateTime(timezone=True), server_default=func.now())
    finished_at = Column(DateTime(timezone=True), nullable=True)
    status = Column(String, nullable=False, default="running")
    qp = Column(Integer, nullable=True)
    config = Column(JSON, nullable=False)
    final_loss = Column(Float, nullable=True)
    checkpoint_path = Column(String, nullable=True)

    losses = relationship("LossRecord", back_populates="run", order_by="LossRecord.step")
    evals = relationship("EvalRecord", back_populates="run")


class LossRecord(Base):
    __tablename__ = "loss_records"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("training_runs.id"), nullable=False, index=True)
    step = Column(Integer, nullable=False)
    epoch = Column(Integer, nullable=False)
    lr = Column(Float, nullable=False)
    total = Column(Float, nullable=False)
    final = Column(Float, nullable=False)
    intermediates = Column(JSON, nullable=False, default=list)

    run = relationship("TrainingRun", back_populates="losses")


class EvalRecord(Base):
    __tablename__ = "eval_records"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("training_runs.id"), nullable=True)
    created_at = Column(DateTime(timezone=True), server_default=func.now())
    sequence = Column(String, nullable=False)
    qp = Column(String, nullable=True)
    frames = Column(Integer, nullable=False)
    mean_psnr_compressed = Column(Float, nullable=False)
    mean_psnr_enhanced = Column(Float, nullable=False)
    mean_delta_psnr = Column(Float, nullable=False)

    run = relationship("TrainingRun", back_populates="evals")
