"""
Synthetic EEG/envelope generator.

The envelope is smoothed rectified noise; every EEG channel of subject s is
weight_s[c] * (fir_s * envelope) + gaussian noise. Subjects differ in both the
channel weights and the FIR response, so subject identity is informative.

With shared weights, alternating polarity and centered EEG, subjects are not
told apart by the EEG alone, yet the envelope mapping still differs per subject.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import signal

from eegdec.data_io import Manifest, ManifestEntry, RecordingPair, SPLITS, save_manifest, write_recording
from eegdec.errors import ConfigError
from eegdec.seeding import substream
from eegdec.tensor import Tensor

logger = logging.getLogger(__name__)


class SyntheticSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_subjects: int = Field(4, ge=1)
    recordings_per_subject: int = Field(2, ge=1)
    duration_seconds: float = Field(60.0, gt=0.0)
    channels: int = Field(64, ge=1)
    noise_std: float = Field(0.1, ge=0.0)
    filter_length: int = Field(8, ge=1)
    sample_rate_hz: int = Field(64, ge=1)
    smoothing_samples: int = Field(16, ge=1, description="Boxcar width applied twice to the rectified noise")
    seed: int = 0
    weights: Optional[List[float]] = Field(None, description="Fixed channel weights shared by all subjects")
    fir: Optional[List[float]] = Field(None, description="Fixed FIR filter shared by all subjects")
    alternate_polarity: bool = Field(False, description="Negate the FIR response of every odd-numbered subject")
    center_eeg: bool = Field(False, description="Remove each channel's mean from every recording before noise")

    @model_validator(mode="after")
    def check_overrides(self) -> "SyntheticSpec":
        if self.weights is not None and len(self.weights) != self.channels:
            raise ValueError(f"weights has {len(self.weights)} entries for {self.channels} channels")
        if self.fir is not None and len(self.fir) < 1:
            raise ValueError("fir must have at least one tap")
        return self

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_seconds * self.sample_rate_hz))


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    recordings: List[RecordingPair]
    weights: np.ndarray  # [n_subjects, channels]
    filters: np.ndarray  # [n_subjects, filter_length]

    def truth(self) -> dict:
        return {
            "spec": self.spec.model_dump(),
            "weights": self.weights.tolist(),
            "filters": self.filters.tolist(),
        }


def _as_float32(values: np.ndarray) -> np.ndarray:
    # the on-disk format is float32; keeping in-memory values representable makes files round-trip exactly
    return values.astype(np.float32).astype(np.float64)


def _envelope(rng: np.random.Generator, n_samples: int, smoothing: int) -> np.ndarray:
    warmup = 2 * smoothing
    rectified = np.abs(rng.standard_normal(n_samples + warmup))
    boxcar = np.ones(smoothing) / smoothing
    smooth = signal.lfilter(boxcar, [1.0], signal.lfilter(boxcar, [1.0], rectified))[warmup:]
    return smooth / smooth.std() if smooth.std() > 0 else smooth


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    if spec.n_samples < 2:
        raise ConfigError(f"synthetic recordings need at least 2 samples, got {spec.n_samples}")
    rng = substream(spec.seed, "data")

    weights = np.empty((spec.n_subjects, spec.channels))
    fir_length = len(spec.fir) if spec.fir is not None else spec.filter_length
    filters = np.empty((spec.n_subjects, fir_length))
    for subject in range(spec.n_subjects):
        weights[subject] = spec.weights if spec.weights is not None else rng.standard_normal(spec.channels)
        if spec.fir is not None:
            filters[subject] = spec.fir
        else:
            taps = rng.uniform(0.1, 1.0, fir_length) * np.exp(-np.arange(fir_length) / rng.uniform(1.0, 4.0))
            filters[subject] = taps / taps.sum()
        if spec.alternate_polarity and subject % 2 == 1:
            filters[subject] = -filters[subject]

    recordings = []
    for subject in range(spec.n_subjects):
        for _ in range(spec.recordings_per_subject):
            envelope = _as_float32(_envelope(rng, spec.n_samples, spec.smoothing_samples))
            filtered = signal.lfilter(filters[subject], [1.0], envelope)
            eeg = filtered[:, None] * weights[subject][None, :]
            if spec.center_eeg:
                eeg = eeg - eeg.mean(axis=0, keepdims=True)
            if spec.noise_std > 0:
                eeg = eeg + spec.noise_std * rng.standard_normal(eeg.shape)
            recordings.append(
                RecordingPair(
                    subject_id=subject,
                    eeg=Tensor(_as_float32(eeg), copy=False),
                    envelope=Tensor(envelope, copy=False),
                    sample_rate_hz=spec.sample_rate_hz,
                )
            )
    logger.info(
        f"Generated {len(recordings)} synthetic recordings "
        f"({spec.n_subjects} subjects, {spec.n_samples} samples, {spec.channels} channels)"
    )
    return SyntheticDataset(spec=spec, recordings=recordings, weights=weights, filters=filters)


def assign_splits(dataset: SyntheticDataset, pattern: Sequence[str] = SPLITS) -> List[str]:
    """Cycle `pattern` over each subject's recordings, in generation order."""
    for split in pattern:
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}; expected one of {SPLITS}")
    counters = {}
    splits = []
    for rec in dataset.recordings:
        index = counters.get(rec.subject_id, 0)
        counters[rec.subject_id] = index + 1
        splits.append(pattern[index % len(pattern)])
    return splits


def write_dataset(
    dataset: SyntheticDataset,
    out_dir: Union[str, Path],
    pattern: Sequence[str] = SPLITS,
) -> Manifest:
    """Write EEGR files, `manifest.json` and the ground-truth echo `spec.json`."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out_dir}: {exc}") from None

    entries = []
    per_subject = {}
    for rec, split in zip(dataset.recordings, assign_splits(dataset, pattern)):
        index = per_subject.get(rec.subject_id, 0)
        per_subject[rec.subject_id] = index + 1
        stem = f"sub-{rec.subject_id:03d}_rec-{index:03d}"
        eeg_name, envelope_name = f"{stem}_eeg.eegr", f"{stem}_envelope.eegr"
        write_recording(out_dir / eeg_name, out_dir / envelope_name, rec)
        entries.append(
            ManifestEntry(eeg_path=eeg_name, envelope_path=envelope_name, subject_id=rec.subject_id, split=split)
        )

    manifest = Manifest(entries=entries)
    save_manifest(out_dir / "manifest.json", manifest)
    (out_dir / "spec.json").write_text(json.dumps(dataset.truth(), indent=2))
    logger.info(f"Wrote {len(entries)} recording pairs and manifest to {out_dir}")
    return manifest
