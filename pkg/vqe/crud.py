from typing import List, Optional

from sqlalchemy.orm import Session
from sqlalchemy.sql import func

from . import models, schemas


# --- Training runs ---
def create_run(db: Session, config: schemas.TrainConfig) -> models.TrainingRun:
    db_run = models.TrainingRun(status="running", qp=config.qp, config=config.model_dump())
    db.add(db_run)
    db.commit()
    db.refresh(db_run)
    return db_run


def log_step(db: Session, run: models.TrainingRun, record: schemas.LossRecord) -> models.LossRecord:
    db_record = models.LossRecord(run_id=run.id, **record.model_dump())
    db.add(db_record)
    db.commit()
    return db_record


def finish_run(db: Session, run: models.TrainingRun, status: str, final_loss: Optional[float] = None,
               checkpoint_path: Optional[str] = None) -> models.TrainingRun:
    run.status = status
    run.final_loss = final_loss
    run.checkpoint_path = checkpoint_path
    run.finished_at = func.now()
    db.commit()
    db.refresh(run)
    return run


def get_run(db: Session, run_id: int) -> Optional[models.TrainingRun]:
    return db.query(models.TrainingRun).filter(models.TrainingRun.id == run_id).first()


def get_runs(db: Session, skip: int = 0, limit: int = 100) -> List[models.TrainingRun]:
    return db.query(models.TrainingRun).order_by(models.TrainingRun.id).offset(skip).limit(limit).all()


def get_losses(db: Session, run_id: int) -> List[models.LossRecord]:
    return db.query(models.LossRecord).filter(models.LossRecord.run_id == run_id).order_by(models.LossRecord.step).all()


# --- Evaluations ---
def record_eval(db: Session, report: schemas.EvalReport, run_id: Optional[int] = None) -> models.EvalRecord:
    db_eval = models.EvalRecord(
        run_id=run_id,
        sequence=report.sequence,
        qp=report.qp,
        frames=len(report.frames),
        mean_psnr_compressed=report.mean_psnr_compressed,
        mean_psnr_enhanced=report.mean_psnr_enhanced,
        mean_delta_psnr=report.mean_delta_psnr,
    )
    db.add(db_eval)
    db.commit()
    db.refresh(db_eval)
    return db_eval


def get_evals(db: Session, run_id: Optional[int] = None) -> List[models.EvalRecord]:
    query = db.query(models.EvalRecord)
    if run_id is not None:
        query = query.filter(models.EvalRecord.run_id == run_id)
    return query.order_by(models.EvalRecord.id).all()
