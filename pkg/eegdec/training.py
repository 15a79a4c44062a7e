"""
Adam, the step-decay learning-rate schedule and the epoch loop.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from eegdec.checkpoint import load_checkpoint, save_checkpoint
from eegdec.data_io import Manifest, RecordingPair, random_crop
from eegdec.errors import ConfigError, ContractError, NumericError
from eegdec.inference import evaluate_recordings
from eegdec.model import DecoderModel, ModelConfig
from eegdec.objective import LossConfig, total_loss
from eegdec.seeding import generator_state, restore_generator, substream
from eegdec.tensor import Tape, Tensor

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
EpochCallback = Callable[[Dict[str, Any]], None]


class OptimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lr0: float = Field(0.0005, gt=0.0, description="Initial learning rate")
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    decay_factor: float = Field(0.9, gt=0.0, le=1.0, description="StepLR multiplicative decay")
    decay_every_epochs: int = Field(100, ge=1, description="StepLR period in epochs")
    epochs: int = Field(1000, ge=1)
    batch_size: int = Field(64, ge=1)
    seed: int = Field(0, description="Root of every random stream")
    clip_norm: Optional[float] = Field(None, gt=0.0, description="Global gradient-norm clip; off when unset")
    max_steps: Optional[int] = Field(None, ge=1, description="Stop after this many optimizer steps")
    eval_every_epochs: int = Field(1, ge=1, description="Validation period in epochs")


@dataclass
class TrainState:
    model: DecoderModel
    first_moment: Dict[str, np.ndarray]
    second_moment: Dict[str, np.ndarray]
    step: int = 0
    epoch: int = 0
    lr: float = 0.0005
    best_val_r: Optional[float] = None
    rng_state: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def fresh(cls, model: DecoderModel, lr: float) -> "TrainState":
        shapes = {path: np.zeros(parameter.shape) for path, parameter in model.named_parameters()}
        return cls(
            model=model,
            first_moment={path: zeros.copy() for path, zeros in shapes.items()},
            second_moment=shapes,
            lr=lr,
        )

    def header(self) -> Dict[str, Any]:
        return {
            "step": self.step,
            "epoch": self.epoch,
            "lr": self.lr,
            "best_val_r": self.best_val_r,
            "rng_state": self.rng_state,
        }

    def moment_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {f"optim.m/{path}": value for path, value in self.first_moment.items()}
        arrays.update({f"optim.v/{path}": value for path, value in self.second_moment.items()})
        return arrays


def scheduler_lr(cfg: OptimConfig, epoch: int) -> float:
    """lr0 * decay_factor ** floor(epoch / decay_every_epochs)."""
    return cfg.lr0 * cfg.decay_factor ** (epoch // cfg.decay_every_epochs)


def adam_step(state: TrainState, grads: Mapping[str, Optional[np.ndarray]], cfg: OptimConfig) -> TrainState:
    """Bias-corrected Adam update of every model parameter at `state.lr`."""
    parameters = dict(state.model.named_parameters())
    for path in parameters:
        if grads.get(path) is None:
            raise ContractError(f"missing gradient for parameter {path}")

    state.step += 1
    t = state.step
    correction1 = 1.0 - cfg.beta1 ** t
    correction2 = 1.0 - cfg.beta2 ** t
    for path, parameter in parameters.items():
        grad = grads[path]
        m = cfg.beta1 * state.first_moment[path] + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * state.second_moment[path] + (1.0 - cfg.beta2) * grad * grad
        state.first_moment[path] = m
        state.second_moment[path] = v
        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + cfg.adam_eps)
        parameter.assign(parameter.data - update)
    return state


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most `max_norm`; returns the norm before clipping."""
    norm = math.sqrt(sum(float(np.sum(grad * grad)) for grad in grads.values()))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for path in grads:
            grads[path] = grads[path] * scale
    return norm


@dataclass
class TrainResult:
    state: TrainState
    history: List[Dict[str, Any]]
    best_checkpoint: Optional[Path] = None
    last_checkpoint: Optional[Path] = None


def _usable_recordings(recordings: List[RecordingPair], segment_samples: int) -> List[RecordingPair]:
    usable = []
    for index, rec in enumerate(recordings):
        if rec.n_samples < segment_samples:
            logger.warning(
                f"Skipping training recording {index} (subject {rec.subject_id}): "
                f"{rec.n_samples} samples < segment of {segment_samples}"
            )
            continue
        usable.append(rec)
    return usable


def _dump_diagnostics(output_dir: Optional[Path], payload: Dict[str, Any]) -> Optional[str]:
    if output_dir is None:
        return None
    path = output_dir / "diagnostic.json"
    path.write_text(json.dumps(payload, indent=2))
    return str(path)


def _restore(state: TrainState, resume_from: PathLike) -> None:
    checkpoint = load_checkpoint(resume_from)
    if checkpoint.model_config != state.model.config:
        raise ConfigError(f"checkpoint {resume_from} was written for a different model configuration")
    if checkpoint.train_state is None:
        raise ConfigError(f"checkpoint {resume_from} holds no training state to resume from")
    state.model.load_state_dict(checkpoint.parameters())
    state.first_moment = checkpoint.namespace("optim.m/")
    state.second_moment = checkpoint.namespace("optim.v/")
    header = checkpoint.train_state
    state.step = header["step"]
    state.epoch = header["epoch"]
    state.lr = header["lr"]
    state.best_val_r = header["best_val_r"]
    state.rng_state = header["rng_state"]
    logger.info(f"Resumed from {resume_from} at epoch {state.epoch}, step {state.step}")


def train(
    model: DecoderModel,
    manifest: Union[Manifest, Dict[str, List[RecordingPair]]],
    model_config: ModelConfig,
    optim_config: OptimConfig,
    loss_config: LossConfig,
    output_dir: Optional[PathLike] = None,
    resume_from: Optional[PathLike] = None,
    on_epoch: Optional[EpochCallback] = None,
) -> TrainResult:
    """
    Train `model` on the manifest's train split, validating on its val split.

    Each epoch shuffles the usable recordings, draws one random crop per
    recording, and takes one Adam step per batch. Metrics go to
    `<output_dir>/metrics.jsonl`; `last.edck` and `best.edck` checkpoints are
    written after every epoch when `output_dir` is given.

    `manifest` may also be a mapping of split name to in-memory recordings.
    """
    if model.config != model_config:
        raise ConfigError("model was built with a different configuration than the one given")
    segment = model_config.segment_samples

    if isinstance(manifest, Manifest):
        train_recordings = manifest.load_split("train")
        val_recordings = manifest.load_split("val")
    else:
        train_recordings = list(manifest.get("train", []))
        val_recordings = list(manifest.get("val", []))
    usable = _usable_recordings(train_recordings, segment)
    if not usable:
        raise ConfigError(
            f"no usable training recordings: {len(train_recordings)} in the train split, "
            f"none with at least {segment} samples"
        )

    out_dir = Path(output_dir) if output_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    state = TrainState.fresh(model, scheduler_lr(optim_config, 0))
    crop_rng = substream(optim_config.seed, "cropping")
    dropout_rng = substream(optim_config.seed, "dropout")
    if resume_from is not None:
        _restore(state, resume_from)
        crop_rng = restore_generator(state.rng_state["cropping"])
        dropout_rng = restore_generator(state.rng_state["dropout"])

    history: List[Dict[str, Any]] = []
    loss_history: List[float] = []
    result = TrainResult(state=state, history=history)
    conditioned = model.conditioned
    metrics_path = out_dir / "metrics.jsonl" if out_dir is not None else None
    if metrics_path is not None and resume_from is None:
        metrics_path.unlink(missing_ok=True)

    logger.info(
        f"Training {model.count_parameters():,} parameters on {len(usable)} recording(s), "
        f"{len(val_recordings)} validation recording(s), epochs {state.epoch}..{optim_config.epochs - 1}"
    )
    while state.epoch < optim_config.epochs:
        if optim_config.max_steps is not None and state.step >= optim_config.max_steps:
            break
        epoch = state.epoch
        state.lr = scheduler_lr(optim_config, epoch)
        order = crop_rng.permutation(len(usable))
        crops = [(usable[i], random_crop(usable[i], segment, crop_rng)) for i in order]

        epoch_losses = []
        for start in range(0, len(crops), optim_config.batch_size):
            if optim_config.max_steps is not None and state.step >= optim_config.max_steps:
                break
            batch = crops[start:start + optim_config.batch_size]
            eeg = Tensor(np.stack([crop.eeg.data for _, crop in batch]), copy=False)
            target = Tensor(np.stack([crop.envelope.data for _, crop in batch]), copy=False)
            subject_ids = [rec.subject_id for rec, _ in batch] if conditioned else None

            model.zero_grad()
            with Tape() as tape:
                pred = model.forward(eeg, subject_ids, training=True, rng=dropout_rng)
                loss = total_loss(pred, target, loss_config)
            loss_value = loss.item()
            loss_history.append(loss_value)
            if not math.isfinite(loss_value):
                dump = _dump_diagnostics(
                    out_dir,
                    {"step": state.step, "epoch": epoch, "lr": state.lr, "loss_history": loss_history[-100:]},
                )
                logger.error(f"Non-finite loss {loss_value} at step {state.step}, epoch {epoch}; diagnostics: {dump}")
                raise NumericError(f"non-finite loss {loss_value} at step {state.step} (epoch {epoch})", dump)
            tape.backward(loss)

            grads = {path: parameter.grad for path, parameter in model.named_parameters()}
            if optim_config.clip_norm is not None:
                clip_by_global_norm(grads, optim_config.clip_norm)
            adam_step(state, grads, optim_config)
            epoch_losses.append(loss_value)

        val_r = None
        if val_recordings and (epoch + 1) % optim_config.eval_every_epochs == 0:
            report = evaluate_recordings(model, val_recordings, segment)
            val_r = report.overall_mean

        state.epoch = epoch + 1
        state.rng_state = {"cropping": generator_state(crop_rng), "dropout": generator_state(dropout_rng)}
        metrics = {
            "epoch": epoch,
            "step": state.step,
            "train_loss": float(np.mean(epoch_losses)) if epoch_losses else None,
            "val_r": val_r,
            "lr": state.lr,
        }
        history.append(metrics)
        logger.info(
            f"Epoch {epoch}: train_loss={metrics['train_loss']}, val_r={val_r}, lr={state.lr:.6g}, step={state.step}"
        )

        improved = val_r is not None and (state.best_val_r is None or val_r > state.best_val_r)
        if improved:
            state.best_val_r = val_r
        if out_dir is not None:
            with metrics_path.open("a") as handle:
                handle.write(json.dumps(metrics) + "\n")
            result.last_checkpoint = save_checkpoint(
                out_dir / "last.edck", model, state.header(), state.moment_arrays()
            )
            if improved:
                result.best_checkpoint = save_checkpoint(
                    out_dir / "best.edck", model, state.header(), state.moment_arrays()
                )
        if on_epoch is not None:
            on_epoch(metrics)

    return result
