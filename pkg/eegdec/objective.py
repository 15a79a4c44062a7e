"""
Pearson correlation, the composite training loss (-R + alpha * L1) and
challenge-style report aggregation.
"""
import logging
import math
from collections import defaultdict
from typing import Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from eegdec import tensor as T
from eegdec.errors import ContractError, DimensionError
from eegdec.tensor import Tensor

logger = logging.getLogger(__name__)


class LossConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    alpha: float = Field(0.2, ge=0.0, description="Weight of the L1 term")
    l1_enabled: bool = Field(True, description="False drops the L1 term entirely")
    epsilon_denominator: float = Field(1e-8, gt=0.0, description="Floor of the spread product under the Pearson square root")


def pearson_rows(pred: Tensor, target: Tensor, epsilon: float = 1e-8) -> Tensor:
    """
    Pearson r along the last axis; [.., n] x [.., n] -> [..].

    r = sum(dp * dt) / sqrt(max(sum(dp^2) * sum(dt^2), epsilon)). The floor only
    engages for near-constant inputs; a constant input gives r = 0.
    """
    if pred.shape != target.shape:
        raise DimensionError(f"prediction shape {pred.shape} does not match target shape {target.shape}")
    if pred.ndim == 0 or pred.shape[-1] < 2:
        raise ContractError(f"Pearson r needs at least 2 samples, got shape {pred.shape}")
    dp = pred - T.mean(pred, -1, keepdims=True)
    dt = target - T.mean(target, -1, keepdims=True)
    covariance = T.sum_(dp * dt, -1)
    spread = T.sum_(dp * dp, -1) * T.sum_(dt * dt, -1)
    floored = T.relu(spread - epsilon) + epsilon
    return covariance / T.sqrt(floored)


def pearson_r(pred: Tensor, target: Tensor, epsilon: float = 1e-8) -> Tensor:
    """Scalar Pearson r of two 1-D signals."""
    if pred.ndim != 1:
        raise DimensionError(f"pearson_r expects 1-D signals, got shape {pred.shape}")
    return pearson_rows(pred, target, epsilon)


def combine_loss(r: float, l1: float, cfg: LossConfig) -> float:
    """-R + alpha * L1 on plain numbers."""
    if not cfg.l1_enabled or cfg.alpha == 0.0:
        return -r
    return -r + cfg.alpha * l1


def total_loss(pred: Tensor, target: Tensor, cfg: LossConfig) -> Tensor:
    """
    Batch loss for [batch, time] predictions.

    R is the mean over batch items of each item's correlation over time; L1 is
    the mean absolute error over all elements.
    """
    if pred.shape != target.shape:
        raise DimensionError(f"prediction shape {pred.shape} does not match target shape {target.shape}")
    if pred.ndim != 2:
        raise DimensionError(f"total_loss expects [batch, time], got {pred.shape}")
    loss = -T.mean(pearson_rows(pred, target, cfg.epsilon_denominator))
    if cfg.l1_enabled and cfg.alpha > 0.0:
        loss = loss + T.scalar_mul(T.mean(T.abs_(pred - target)), cfg.alpha)
    return loss


class SubjectStats(BaseModel):
    mean_r: float
    std_r: float
    n_recordings: int


class EvalReport(BaseModel):
    per_subject: Dict[int, SubjectStats]
    overall_mean: float
    overall_std: float
    subject_mean: float = Field(description="Mean over per-subject means")
    subject_std: float = Field(description="Population std over per-subject means")
    n_recordings: int

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


def aggregate_report(per_recording: Sequence[Tuple[int, float]]) -> EvalReport:
    """
    Recording-level and subject-level mean and population std of Pearson r.
    """
    if not per_recording:
        raise ContractError("cannot aggregate an empty list of recording scores")
    grouped: Dict[int, List[float]] = defaultdict(list)
    for subject_id, r in per_recording:
        if not math.isfinite(r):
            raise ContractError(f"non-finite correlation {r} for subject {subject_id}")
        grouped[int(subject_id)].append(float(r))

    per_subject = {
        subject_id: SubjectStats(
            mean_r=float(np.mean(values)),
            std_r=float(np.std(values)),
            n_recordings=len(values),
        )
        for subject_id, values in sorted(grouped.items())
    }
    values = np.array([r for _, r in per_recording], dtype=np.float64)
    subject_means = np.array([stats.mean_r for stats in per_subject.values()])
    return EvalReport(
        per_subject=per_subject,
        overall_mean=float(values.mean()),
        overall_std=float(values.std()),
        subject_mean=float(subject_means.mean()),
        subject_std=float(subject_means.std()),
        n_recordings=len(values),
    )
