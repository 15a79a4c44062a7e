"""
Least-squares backward model: envelope(t) ~ sum_k eeg(t + k) @ w_k + b over a
two-sided window k = -past_lags .. lags - 1.

Serves as the learnability reference on synthetic data. It exposes the same
`forward` surface as `DecoderModel`, so chunked inference and evaluation accept it.
"""
import logging
from typing import Dict, Optional, Sequence

import numpy as np

from eegdec.data_io import RecordingPair
from eegdec.errors import ContractError, DimensionError, SubjectUnknownError
from eegdec.tensor import Tensor

logger = logging.getLogger(__name__)


def lagged_design(eeg: np.ndarray, lags: int, past_lags: int = 0) -> np.ndarray:
    """
    [time, channels] -> [time, (past_lags + lags) * channels + 1].

    Column blocks run from eeg(t - past_lags) to eeg(t + lags - 1), then a ones
    column. Samples outside the recording repeat the nearest edge sample.
    """
    time, _ = eeg.shape
    padded = np.pad(eeg, ((past_lags, lags - 1), (0, 0)), mode="edge")
    columns = [padded[k:k + time] for k in range(past_lags + lags)]
    return np.hstack(columns + [np.ones((time, 1))])


def complete_rows(time: int, lags: int, past_lags: int) -> slice:
    """Rows whose whole lag window lies inside the recording; all rows if none does."""
    if time <= past_lags + lags - 1:
        return slice(0, time)
    return slice(past_lags, time - lags + 1)


class LinearDecoder:
    def __init__(
        self,
        coefficients: Dict[Optional[int], np.ndarray],
        lags: int,
        channels: int,
        past_lags: int = 0,
    ):
        self.coefficients = coefficients
        self.lags = lags
        self.past_lags = past_lags
        self.channels = channels

    @property
    def conditioned(self) -> bool:
        return None not in self.coefficients

    def _weights_for(self, subject_id: Optional[int]) -> np.ndarray:
        if not self.conditioned:
            return self.coefficients[None]
        if subject_id not in self.coefficients:
            raise SubjectUnknownError(f"no per-subject fit for subject {subject_id}")
        return self.coefficients[subject_id]

    def forward(
        self,
        eeg: Tensor,
        subject_ids: Optional[Sequence[int]] = None,
        training: bool = False,
        rng=None,
    ) -> Tensor:
        if eeg.ndim != 3 or eeg.shape[-1] != self.channels:
            raise DimensionError(f"expected EEG [batch, time, {self.channels}], got {eeg.shape}")
        if self.conditioned and subject_ids is None:
            raise SubjectUnknownError("a per-subject fit needs subject ids")
        outputs = []
        for index in range(eeg.shape[0]):
            subject_id = subject_ids[index] if self.conditioned else None
            design = lagged_design(eeg.data[index], self.lags, self.past_lags)
            outputs.append(design @ self._weights_for(subject_id))
        return Tensor(np.stack(outputs), copy=False)

    __call__ = forward


def _solve(recordings: Sequence[RecordingPair], lags: int, past_lags: int, ridge: float) -> np.ndarray:
    designs, targets = [], []
    for rec in recordings:
        rows = complete_rows(rec.n_samples, lags, past_lags)
        designs.append(lagged_design(rec.eeg.data, lags, past_lags)[rows])
        targets.append(rec.envelope.data[rows])
    design = np.vstack(designs)
    target = np.concatenate(targets)
    if ridge > 0:
        n_features = design.shape[1]
        design = np.vstack([design, np.sqrt(ridge) * np.eye(n_features)])
        target = np.concatenate([target, np.zeros(n_features)])
    solution, *_ = np.linalg.lstsq(design, target, rcond=None)
    return solution


def fit_linear_decoder(
    recordings: Sequence[RecordingPair],
    lags: int = 8,
    per_subject: bool = False,
    ridge: float = 0.0,
    past_lags: int = 8,
) -> LinearDecoder:
    if not recordings:
        raise ContractError("cannot fit a decoder on zero recordings")
    if lags < 1:
        raise ContractError(f"lags must be >= 1, got {lags}")
    if past_lags < 0:
        raise ContractError(f"past_lags must be >= 0, got {past_lags}")
    channels = recordings[0].n_channels
    if per_subject:
        subjects = sorted({rec.subject_id for rec in recordings})
        coefficients = {
            subject: _solve([rec for rec in recordings if rec.subject_id == subject], lags, past_lags, ridge)
            for subject in subjects
        }
    else:
        coefficients = {None: _solve(recordings, lags, past_lags, ridge)}
    logger.debug(f"Fitted linear decoder: {len(coefficients)} fit(s), {past_lags}+{lags} lags, {channels} channels")
    return LinearDecoder(coefficients, lags, channels, past_lags)
