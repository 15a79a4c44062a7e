"""
Chunked whole-recording inference and the challenge-style evaluation harness.
"""
import enum
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from eegdec.data_io import Manifest, RecordingPair, write_signal
from eegdec.errors import ContractError, DimensionError, TooShortError
from eegdec.objective import EvalReport, aggregate_report, pearson_r
from eegdec.tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


class TailPolicy(str, enum.Enum):
    PROCESS_SHORT_TAIL = "process_short_tail"
    DROP_TAIL = "drop_tail"


class EnvelopePredictor(Protocol):
    conditioned: bool

    def forward(self, eeg: Tensor, subject_ids=None, training: bool = False, rng=None) -> Tensor:
        ...


@dataclass(frozen=True)
class ChunkPlan:
    chunk_samples: int
    offsets: Tuple[int, ...]
    lengths: Tuple[int, ...]
    tail_policy: TailPolicy

    @property
    def covered_samples(self) -> int:
        return sum(self.lengths)

    def __len__(self) -> int:
        return len(self.offsets)


def plan_chunks(
    total_samples: int,
    chunk_samples: int = 320,
    tail_policy: Union[TailPolicy, str] = TailPolicy.PROCESS_SHORT_TAIL,
) -> ChunkPlan:
    """
    Contiguous, non-overlapping chunks at offsets 0, c, 2c, ...

    A final short chunk is kept only under `process_short_tail` and only when it
    has at least 2 samples (a correlation needs 2 points).
    """
    tail_policy = TailPolicy(tail_policy)
    if chunk_samples < 2:
        raise ContractError(f"chunk_samples must be >= 2, got {chunk_samples}")
    if total_samples < 2:
        raise TooShortError(f"cannot chunk a signal of {total_samples} samples")
    full, tail = divmod(total_samples, chunk_samples)
    offsets = [i * chunk_samples for i in range(full)]
    lengths = [chunk_samples] * full
    if tail_policy is TailPolicy.PROCESS_SHORT_TAIL and tail >= 2:
        offsets.append(full * chunk_samples)
        lengths.append(tail)
    return ChunkPlan(chunk_samples, tuple(offsets), tuple(lengths), tail_policy)


def infer_eeg(model: EnvelopePredictor, eeg: Tensor, subject_id: Optional[int], plan: ChunkPlan) -> Tensor:
    """Per-chunk forward passes over EEG [time, channels], concatenated in offset order."""
    if not plan.offsets:
        raise ContractError("the chunk plan is empty; nothing to infer")
    if eeg.ndim != 2:
        raise DimensionError(f"expected EEG [time, channels], got {eeg.shape}")
    if plan.offsets[-1] + plan.lengths[-1] > eeg.shape[0]:
        raise ContractError(f"chunk plan covers {plan.covered_samples} samples, recording has {eeg.shape[0]}")
    subject_ids = [subject_id] if model.conditioned else None
    outputs = []
    with no_grad():
        for offset, length in zip(plan.offsets, plan.lengths):
            chunk = Tensor(eeg.data[None, offset:offset + length], copy=False)
            outputs.append(model.forward(chunk, subject_ids, training=False).data[0])
    return Tensor(np.concatenate(outputs), copy=False)


def infer_recording(model: EnvelopePredictor, rec: RecordingPair, plan: ChunkPlan) -> Tensor:
    return infer_eeg(model, rec.eeg, rec.subject_id, plan)


def score_recording(
    model: EnvelopePredictor,
    rec: RecordingPair,
    chunk_samples: int,
    tail_policy: Union[TailPolicy, str] = TailPolicy.PROCESS_SHORT_TAIL,
    epsilon: float = 1e-8,
) -> Tuple[float, Tensor]:
    """One Pearson r between the whole predicted envelope and the truth over the covered region."""
    plan = plan_chunks(rec.n_samples, chunk_samples, tail_policy)
    predicted = infer_recording(model, rec, plan)
    target = Tensor(rec.envelope.data[:plan.covered_samples], copy=False)
    with no_grad():
        r = pearson_r(predicted, target, epsilon).item()
    return r, predicted


def evaluate_recordings(
    model: EnvelopePredictor,
    recordings: Iterable[RecordingPair],
    chunk_samples: int = 320,
    tail_policy: Union[TailPolicy, str] = TailPolicy.PROCESS_SHORT_TAIL,
    predictions_dir: Optional[Path] = None,
    names: Optional[Sequence[str]] = None,
) -> EvalReport:
    scores: List[Tuple[int, float]] = []
    for index, rec in enumerate(recordings):
        r, predicted = score_recording(model, rec, chunk_samples, tail_policy)
        scores.append((rec.subject_id, r))
        if predictions_dir is not None:
            name = names[index] if names else f"prediction-{index:04d}"
            write_signal(Path(predictions_dir) / f"{name}.eegr", predicted.data[None, :], rec.subject_id, rec.sample_rate_hz)
    if not scores:
        raise ContractError("no recordings to evaluate")
    return aggregate_report(scores)


def evaluate_split(
    model: EnvelopePredictor,
    manifest: Manifest,
    split: str,
    chunk_samples: int = 320,
    tail_policy: Union[TailPolicy, str] = TailPolicy.PROCESS_SHORT_TAIL,
    subject_ids: Optional[Sequence[int]] = None,
    predictions_dir: Optional[Union[str, Path]] = None,
) -> EvalReport:
    """
    Evaluate every recording of `split` (optionally only the given subjects).

    Read-only with respect to the model: nothing is recorded on a tape and no
    parameter is touched.
    """
    entries = manifest.entries_for(split)
    if subject_ids is not None:
        wanted = set(subject_ids)
        entries = [entry for entry in entries if entry.subject_id in wanted]
    if not entries:
        raise ContractError(f"split {split!r} has no recordings to evaluate")
    logger.info(f"Evaluating {len(entries)} recording(s) of split {split!r}")
    names = [f"{Path(entry.envelope_path).stem}_predicted" for entry in entries]
    return evaluate_recordings(
        model,
        (manifest.load(entry) for entry in entries),
        chunk_samples,
        tail_policy,
        Path(predictions_dir) if predictions_dir is not None else None,
        names,
    )
