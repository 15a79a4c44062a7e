import logging

from celery.exceptions import SoftTimeLimitExceeded

from eegdec.data_io import load_manifest
from eegdec.database import SessionLocal
from eegdec.model import build_model
from eegdec.run_config import RunConfig
from eegdec.run_record import RunStatus, TrainingRun
from eegdec.training import train
from celery_app import celery_app

# Set up logging
logger = logging.getLogger(__name__)


def _report(task, state: str, meta: dict) -> None:
    try:
        task.update_state(state=state, meta=meta)
    except Exception:
        # The result backend is advisory; the run record is authoritative
        logger.debug(f"Could not push {state} state for task {task.request.id}", exc_info=True)


def _mark_failed(db, run_id: int, message: str) -> None:
    try:
        db.rollback()
        run = db.query(TrainingRun).filter(TrainingRun.id == run_id).first()
        if run:
            run.status = RunStatus.FAILED
            run.error_message = message[:500]
            db.commit()
    except Exception as db_error:
        logger.error(f"Error updating training run status: {str(db_error)}", exc_info=True)


def epoch_progress(metrics: dict, total_epochs: int, max_steps=None) -> float:
    """Percentage complete after an epoch, by epochs or by the step budget, whichever is further along."""
    done = (metrics["epoch"] + 1) / total_epochs
    if max_steps:
        done = max(done, metrics["step"] / max_steps)
    return round(min(100.0, 100.0 * done), 2)


@celery_app.task(
    bind=True,
    name="run_training_job",
    time_limit=24 * 60 * 60,
    soft_time_limit=23 * 60 * 60
)
def run_training_job(self, run_id: int, config: dict):
    """
    Train one submitted run.

    Args:
        run_id: ID of the TrainingRun record tracking this run
        config: Resolved run configuration document (flat dotted keys)

    Returns:
        dict: Final status, epochs run and best validation r
    """
    db = SessionLocal()
    try:
        _report(self, 'PROGRESS', {'progress': 0, 'message': 'Starting training run'})

        run = db.query(TrainingRun).filter(TrainingRun.id == run_id).first()
        if not run:
            raise ValueError(f"TrainingRun with id {run_id} not found")

        run_config = RunConfig.from_document(config)
        run.status = RunStatus.RUNNING
        run.progress = 0.0
        run.total_epochs = run_config.optim.epochs
        run.output_dir = run_config.paths.output_dir
        db.commit()

        manifest = load_manifest(run_config.paths.manifest)
        model = build_model(run_config.model, run_config.optim.seed)
        logger.info(
            f"Run {run_id}: {model.count_parameters():,} parameters, preset {run_config.preset}, "
            f"ablations {run_config.ablations or 'none'}"
        )

        def on_epoch(metrics: dict) -> None:
            progress = epoch_progress(metrics, run_config.optim.epochs, run_config.optim.max_steps)
            run.epoch = metrics["epoch"] + 1
            run.progress = progress
            run.last_train_loss = metrics["train_loss"]
            if metrics["val_r"] is not None and (run.best_val_r is None or metrics["val_r"] > run.best_val_r):
                run.best_val_r = metrics["val_r"]
            db.commit()
            _report(
                self,
                'PROGRESS',
                {
                    'progress': progress,
                    'epoch': metrics["epoch"],
                    'train_loss': metrics["train_loss"],
                    'val_r': metrics["val_r"],
                    'lr': metrics["lr"],
                }
            )

        result = train(
            model,
            manifest,
            run_config.model,
            run_config.optim,
            run_config.loss,
            output_dir=run_config.paths.output_dir,
            resume_from=run_config.paths.resume_from,
            on_epoch=on_epoch,
        )

        run.status = RunStatus.COMPLETED
        run.progress = 100.0
        run.best_val_r = result.state.best_val_r
        db.commit()
        logger.info(f"Run {run_id} completed after {result.state.epoch} epochs, best val r {result.state.best_val_r}")

        return {
            'status': 'completed',
            'run_id': run_id,
            'epochs': result.state.epoch,
            'steps': result.state.step,
            'best_val_r': result.state.best_val_r,
        }

    except SoftTimeLimitExceeded:
        _mark_failed(db, run_id, "Training exceeded the time limit. Lower optim.epochs or set optim.max_steps.")
        _report(
            self,
            'FAILURE',
            {
                'error': 'Training exceeded time limit',
                'exc_type': 'SoftTimeLimitExceeded',
                'exc_message': 'The training run exceeded the worker time limit'
            }
        )
        raise
    except Exception as e:
        logger.error(f"Run {run_id} failed: {e}", exc_info=True)
        error_message = str(e)[:500]
        _mark_failed(db, run_id, error_message)
        _report(
            self,
            'FAILURE',
            {
                'error': error_message,
                'exc_type': type(e).__name__,
                'exc_message': error_message
            }
        )
        raise
    finally:
        db.close()
