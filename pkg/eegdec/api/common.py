from pathlib import Path
from typing import Optional

from fastapi import HTTPException
from sqlalchemy.orm import Session

from eegdec.checkpoint import load_model
from eegdec.errors import DecoderError
from eegdec.model import DecoderModel
from eegdec.run_record import TrainingRun


def http_error(exc: DecoderError) -> HTTPException:
    """Decoder errors are client errors: the request named bad data or a bad configuration."""
    return HTTPException(status_code=400, detail=exc.to_dict())


def get_run_or_404(db: Session, run_id: int) -> TrainingRun:
    run = db.query(TrainingRun).filter(TrainingRun.id == run_id).first()
    if not run:
        raise HTTPException(status_code=404, detail=f"Training run {run_id} not found")
    return run


def run_checkpoint(run: TrainingRun) -> Path:
    """Best-validation checkpoint of a run, falling back to the last one."""
    if run.output_dir:
        for name in ("best.edck", "last.edck"):
            path = Path(run.output_dir) / name
            if path.exists():
                return path
    raise HTTPException(status_code=404, detail=f"Training run {run.id} has no checkpoint yet")


def load_model_or_404(path: Path) -> DecoderModel:
    if not Path(path).exists():
        raise HTTPException(status_code=404, detail=f"Checkpoint not found: {path}")
    try:
        return load_model(path)
    except DecoderError as exc:
        raise http_error(exc)


def resolve_model(db: Session, run_id: Optional[int], checkpoint: Optional[str]) -> DecoderModel:
    if (run_id is None) == (checkpoint is None):
        raise HTTPException(status_code=400, detail="Provide exactly one of run_id or checkpoint")
    if run_id is not None:
        return load_model_or_404(run_checkpoint(get_run_or_404(db, run_id)))
    return load_model_or_404(Path(checkpoint))
