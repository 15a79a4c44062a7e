import pytest

from eegdec.data_io import load_manifest
from eegdec.database import Base, SessionLocal, engine
from eegdec.run_config import resolve_run_config
from eegdec.run_record import RunStatus, TrainingRun
from eegdec.tasks.training_job import epoch_progress, run_training_job


@pytest.fixture
def db():
    Base.metadata.create_all(bind=engine)
    session = SessionLocal()
    yield session
    session.query(TrainingRun).delete()
    session.commit()
    session.close()


@pytest.fixture
def document(dataset_dir, tmp_path):
    config = resolve_run_config(
        "desk",
        overrides={
            "model.hidden_dim": 8,
            "model.n_blocks": 1,
            "model.segment_seconds": 0.5,
            "optim.epochs": 3,
            "optim.batch_size": 2,
            "paths.manifest": str(dataset_dir / "manifest.json"),
        },
        manifest=load_manifest(dataset_dir / "manifest.json"),
    )
    return config.with_output_dir(tmp_path / "run").to_document()


def pending_run(db, document) -> int:
    run = TrainingRun(status=RunStatus.PENDING, config=document)
    db.add(run)
    db.commit()
    return run.id


def test_epoch_progress():
    assert epoch_progress({"epoch": 0, "step": 5}, 4) == 25.0
    assert epoch_progress({"epoch": 0, "step": 5}, 4, max_steps=10) == 50.0
    assert epoch_progress({"epoch": 2, "step": 3}, 3) == 100.0
    assert epoch_progress({"epoch": 9, "step": 50}, 4, max_steps=10) == 100.0


def test_training_job_completes_and_records_progress(db, document, tmp_path):
    run_id = pending_run(db, document)
    result = run_training_job.apply(args=(run_id, document))

    assert result.successful()
    summary = result.get()
    assert summary["status"] == "completed"
    assert summary["epochs"] == 3
    assert summary["steps"] == 3

    db.expire_all()
    run = db.query(TrainingRun).filter(TrainingRun.id == run_id).first()
    assert run.status == RunStatus.COMPLETED
    assert run.progress == 100.0
    assert run.epoch == 3
    assert run.total_epochs == 3
    assert run.output_dir == str(tmp_path / "run")
    assert run.last_train_loss is not None
    assert run.best_val_r == summary["best_val_r"]
    assert (tmp_path / "run" / "best.edck").exists()


def test_training_job_marks_the_run_failed(db, document, tmp_path):
    document = {**document, "paths.manifest": str(tmp_path / "missing.json")}
    run_id = pending_run(db, document)
    result = run_training_job.apply(args=(run_id, document))

    assert result.failed()
    db.expire_all()
    run = db.query(TrainingRun).filter(TrainingRun.id == run_id).first()
    assert run.status == RunStatus.FAILED
    assert "not found" in run.error_message


def test_training_job_for_an_unknown_run(db, document):
    result = run_training_job.apply(args=(9999, document))
    assert result.failed()
    assert isinstance(result.result, ValueError)
