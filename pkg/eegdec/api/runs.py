import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from celery.result import AsyncResult
from fastapi import APIRouter, Depends, HTTPException, Query
from pydantic import BaseModel, Field
from sqlalchemy.orm import Session

from celery_app import celery_app
from eegdec.api.common import get_run_or_404, http_error, load_model_or_404, run_checkpoint
from eegdec.config import settings
from eegdec.data_io import SPLITS, load_manifest
from eegdec.database import get_db
from eegdec.errors import DecoderError
from eegdec.inference import TailPolicy, evaluate_split
from eegdec.objective import EvalReport
from eegdec.run_config import RunConfig, resolve_run_config
from eegdec.run_record import RunStatus, TrainingRun
from eegdec.tasks.training_job import run_training_job

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/api/runs", tags=["runs"])


class RunSubmission(BaseModel):
    manifest: str = Field(..., min_length=1, description="Path of the dataset manifest on the worker's filesystem")
    preset: str = Field("default", description="Configuration preset: default, paper or desk")
    ablations: List[str] = Field(default_factory=list, description="Ablations: no-pre-ln, no-conditioner, no-l1")
    overrides: Dict[str, Any] = Field(default_factory=dict, description="Dotted config keys, e.g. optim.epochs")


class RunResponse(BaseModel):
    id: int
    task_id: Optional[str]
    status: RunStatus
    progress: float
    epoch: int
    total_epochs: Optional[int]
    last_train_loss: Optional[float]
    best_val_r: Optional[float]
    output_dir: Optional[str]
    config: Dict[str, Any]
    error_message: Optional[str]
    created_at: datetime
    updated_at: datetime

    class Config:
        from_attributes = True


class RunListResponse(BaseModel):
    runs: List[RunResponse]
    total: int
    page: int
    page_size: int
    total_pages: int


class RunSubmitted(BaseModel):
    run_id: int
    task_id: str
    status: RunStatus
    output_dir: str


class RunMetrics(BaseModel):
    run_id: int
    metrics: List[Dict[str, Any]]


@router.post("", response_model=RunSubmitted, status_code=201)
async def submit_run(
    submission: RunSubmission,
    db: Session = Depends(get_db)
):
    """
    Submit a training run.

    The configuration is resolved and validated up front, so a bad preset,
    ablation or key is rejected with 400 before anything is queued.
    """
    try:
        manifest = load_manifest(submission.manifest)
        overrides = {**submission.overrides, "paths.manifest": submission.manifest}
        run_config = resolve_run_config(submission.preset, None, overrides, submission.ablations, manifest)
    except DecoderError as exc:
        raise http_error(exc)

    run = TrainingRun(status=RunStatus.PENDING, config=run_config.to_document(), total_epochs=run_config.optim.epochs)
    db.add(run)
    db.commit()
    db.refresh(run)

    run_id = run.id
    output_dir = Path(settings.RUNS_DIR) / f"run-{run_id:05d}"
    document = run_config.with_output_dir(output_dir).to_document()
    run.config = document
    run.output_dir = str(output_dir)
    db.commit()

    task = run_training_job.delay(run_id, document)

    run = get_run_or_404(db, run_id)
    run.task_id = task.id
    db.commit()
    db.refresh(run)
    logger.info(f"Queued training run {run_id} as task {task.id}")

    return RunSubmitted(run_id=run_id, task_id=task.id, status=run.status, output_dir=str(output_dir))


@router.get("", response_model=RunListResponse)
async def list_runs(
    page: int = Query(1, ge=1, description="Page number (1-indexed)"),
    page_size: int = Query(20, ge=1, le=100, description="Number of items per page"),
    status: Optional[RunStatus] = Query(None, description="Filter by run status"),
    db: Session = Depends(get_db)
):
    """Paginated list of training runs, newest first."""
    query = db.query(TrainingRun)
    if status is not None:
        query = query.filter(TrainingRun.status == status)

    total = query.count()
    total_pages = (total + page_size - 1) // page_size
    offset = (page - 1) * page_size
    runs = query.order_by(TrainingRun.created_at.desc(), TrainingRun.id.desc()).offset(offset).limit(page_size).all()

    return RunListResponse(
        runs=[RunResponse.model_validate(run) for run in runs],
        total=total,
        page=page,
        page_size=page_size,
        total_pages=total_pages
    )


@router.get("/{run_id}")
async def get_run(
    run_id: int,
    db: Session = Depends(get_db)
):
    """Run record combined with the task's live state when the result backend is reachable."""
    run = get_run_or_404(db, run_id)
    response = RunResponse.model_validate(run).model_dump(mode="json")

    task_state = run.status.value.upper()
    task_info = {}
    if run.task_id:
        try:
            result = AsyncResult(run.task_id, app=celery_app)
            task_state = result.state
            task_info = result.info if isinstance(result.info, dict) else {}
        except Exception:
            logger.debug(f"Could not read task state for run {run_id}", exc_info=True)
    response["task_state"] = task_state
    response["task_info"] = task_info
    return response


@router.get("/{run_id}/metrics", response_model=RunMetrics)
async def get_run_metrics(
    run_id: int,
    db: Session = Depends(get_db)
):
    """Parsed per-epoch metrics log of a run; empty until the first epoch finishes."""
    run = get_run_or_404(db, run_id)
    metrics = []
    if run.output_dir:
        path = Path(run.output_dir) / "metrics.jsonl"
        if path.exists():
            metrics = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    return RunMetrics(run_id=run_id, metrics=metrics)


@router.post("/{run_id}/evaluate", response_model=EvalReport)
async def evaluate_run(
    run_id: int,
    split: str = Query("test", description="Manifest split to evaluate"),
    chunk_samples: Optional[int] = Query(None, ge=2, description="Inference chunk; defaults to the model's segment"),
    tail_policy: TailPolicy = Query(TailPolicy.PROCESS_SHORT_TAIL, description="Handling of the final short chunk"),
    db: Session = Depends(get_db)
):
    """Evaluate a run's best checkpoint on one split of its manifest."""
    if split not in SPLITS:
        raise HTTPException(status_code=400, detail=f"Unknown split '{split}'. Expected one of: {', '.join(SPLITS)}")
    run = get_run_or_404(db, run_id)
    model = load_model_or_404(run_checkpoint(run))
    try:
        run_config = RunConfig.from_document(run.config)
        manifest = load_manifest(run_config.paths.manifest)
        return evaluate_split(
            model,
            manifest,
            split,
            chunk_samples or model.config.segment_samples,
            tail_policy,
        )
    except DecoderError as exc:
        raise http_error(exc)
