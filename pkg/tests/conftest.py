import os
import tempfile

# Settings are read at import time; point them at throwaway resources first.
_SCRATCH = tempfile.mkdtemp(prefix="eegdec-tests-")
os.environ.setdefault("DATABASE_URL", f"sqlite:///{_SCRATCH}/registry.db")
os.environ.setdefault("CELERY_BROKER_URL", "memory://")
os.environ.setdefault("CELERY_RESULT_BACKEND", "cache+memory://")
os.environ.setdefault("CELERY_TASK_ALWAYS_EAGER", "True")
os.environ.setdefault("RUNS_DIR", os.path.join(_SCRATCH, "runs"))

import hypothesis  # noqa: E402
import numpy as np  # noqa: E402
import pytest  # noqa: E402

from eegdec.data_io import RecordingPair  # noqa: E402
from eegdec.model import ModelConfig  # noqa: E402
from eegdec.synthetic import SyntheticSpec, generate_synthetic, write_dataset  # noqa: E402
from eegdec.tensor import Tensor  # noqa: E402

hypothesis.settings.register_profile("fast", max_examples=25, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=500, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "fast"))


def tiny_config(**overrides) -> ModelConfig:
    """A model small enough to train for a few steps inside a unit test."""
    values = dict(
        in_channels=4,
        hidden_dim=8,
        n_blocks=2,
        n_heads=2,
        ffn_expansion=2,
        dropout_rate=0.1,
        n_subjects=2,
        use_conditioner=True,
        segment_seconds=0.5,
        sample_rate_hz=64,
    )
    values.update(overrides)
    return ModelConfig(**values)


def make_recording(rng: np.random.Generator, samples: int, channels: int, subject_id: int = 0) -> RecordingPair:
    return RecordingPair(
        subject_id=subject_id,
        eeg=Tensor(rng.standard_normal((samples, channels))),
        envelope=Tensor(rng.standard_normal(samples)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec():
    return SyntheticSpec(n_subjects=2, recordings_per_subject=3, duration_seconds=2.0, channels=4, seed=3)


@pytest.fixture
def small_dataset(small_spec):
    return generate_synthetic(small_spec)


@pytest.fixture
def dataset_dir(tmp_path, small_dataset):
    """Two subjects, three recordings each (train, val, test) on disk."""
    write_dataset(small_dataset, tmp_path / "data")
    return tmp_path / "data"
