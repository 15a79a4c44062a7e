"""
Run configuration: flat dotted keys, presets and ablations.

Precedence, lowest first: field defaults, preset, config file, command-line
flags, ablations.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Type, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from eegdec.data_io import Manifest
from eegdec.errors import ConfigError
from eegdec.model import ModelConfig
from eegdec.objective import LossConfig
from eegdec.training import OptimConfig

logger = logging.getLogger(__name__)


class PathsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    manifest: Optional[str] = Field(None, description="Dataset manifest (JSON)")
    output_dir: str = Field("runs/latest", description="Directory for checkpoints and the metrics log")
    resume_from: Optional[str] = Field(None, description="Checkpoint to resume training from")


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    preset: str = "default"
    ablations: List[str] = Field(default_factory=list)
    model: ModelConfig = Field(default_factory=ModelConfig)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    def flat(self) -> Dict[str, Any]:
        return flatten(self.model_dump(exclude={"preset", "ablations"}))

    def to_document(self) -> Dict[str, Any]:
        """Flat JSON form written to `config.json` and stored on run records."""
        return {"preset": self.preset, "ablations": list(self.ablations), **self.flat()}

    @classmethod
    def from_document(cls, document: Mapping[str, Any]) -> "RunConfig":
        values = dict(document)
        head = {"preset": values.pop("preset", "default"), "ablations": values.pop("ablations", [])}
        try:
            return cls.model_validate({**head, **unflatten(values)})
        except ValidationError as exc:
            raise ConfigError(f"invalid run configuration: {exc}") from None

    def with_output_dir(self, output_dir: Union[str, Path]) -> "RunConfig":
        return self.model_copy(update={"paths": self.paths.model_copy(update={"output_dir": str(output_dir)})})


SECTIONS: Tuple[Tuple[str, Type[BaseModel]], ...] = (
    ("model", ModelConfig),
    ("optim", OptimConfig),
    ("loss", LossConfig),
    ("paths", PathsConfig),
)

# The proposed configuration: the subject conditioner is on unless ablated.
BASE: Dict[str, Any] = {"model.use_conditioner": True}

PRESETS: Dict[str, Dict[str, Any]] = {
    "default": {},
    "paper": {
        "model.n_blocks": 8,
        "model.n_heads": 2,
        "model.segment_seconds": 5.0,
        "model.sample_rate_hz": 64,
        "optim.lr0": 0.0005,
        "optim.decay_factor": 0.9,
        "optim.epochs": 1000,
        "loss.alpha": 0.2,
    },
    "desk": {
        "model.n_blocks": 2,
        "model.hidden_dim": 32,
        "optim.lr0": 0.001,
        "optim.epochs": 200,
        "optim.batch_size": 8,
    },
}

ABLATIONS: Dict[str, Dict[str, Any]] = {
    "no-pre-ln": {"model.use_pre_ln": False},
    "no-conditioner": {"model.use_conditioner": False},
    "no-l1": {"loss.l1_enabled": False},
}

# Filled from the manifest when nothing above pins them.
MANIFEST_DERIVED = ("model.in_channels", "model.n_subjects")


def flatten(nested: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in nested.items():
        path = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten(value, f"{path}."))
        else:
            flat[path] = value
    return flat


def unflatten(flat: Mapping[str, Any]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        section, _, name = key.partition(".")
        if not name:
            raise ConfigError(f"config key {key!r} is not of the form <section>.<name>")
        nested.setdefault(section, {})[name] = value
    return nested


def config_keys() -> List[Tuple[str, Any, str]]:
    """(dotted key, default, description) for every tunable field."""
    keys = []
    for section, model in SECTIONS:
        for name, field in model.model_fields.items():
            default = None if field.is_required() else field.get_default(call_default_factory=True)
            keys.append((f"{section}.{name}", BASE.get(f"{section}.{name}", default), field.description or ""))
    return keys


def _check_keys(values: Mapping[str, Any], source: str) -> None:
    known = {key for key, _, _ in config_keys()}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s) in {source}: {', '.join(unknown)}")


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Flat dotted keys; `preset` and `ablations` may appear at the top level. Nested sections are flattened."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return flatten(raw)


def resolve_run_config(
    preset: Optional[str] = None,
    file_values: Optional[Mapping[str, Any]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    ablations: Sequence[str] = (),
    manifest: Optional[Manifest] = None,
) -> RunConfig:
    """Merge every configuration layer and validate the result."""
    file_values = dict(file_values or {})
    overrides = dict(overrides or {})
    preset = preset or file_values.pop("preset", None) or "default"
    file_values.pop("preset", None)
    file_ablations = file_values.pop("ablations", [])
    if isinstance(file_ablations, str):
        file_ablations = [file_ablations]
    all_ablations = list(dict.fromkeys([*file_ablations, *ablations]))

    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    for name in all_ablations:
        if name not in ABLATIONS:
            raise ConfigError(f"unknown ablation {name!r}; expected one of {sorted(ABLATIONS)}")
    _check_keys(file_values, "config file")
    _check_keys(overrides, "command-line flags")

    merged: Dict[str, Any] = dict(BASE)
    merged.update(PRESETS[preset])
    merged.update(file_values)
    merged.update(overrides)
    for name in all_ablations:
        merged.update(ABLATIONS[name])

    if manifest is not None:
        derived = {
            "model.in_channels": lambda: manifest.eeg_channels(),
            "model.n_subjects": lambda: manifest.n_subjects,
        }
        for key in MANIFEST_DERIVED:
            if key not in merged:
                merged[key] = derived[key]()

    try:
        config = RunConfig.model_validate(
            {"preset": preset, "ablations": all_ablations, **unflatten(merged)}
        )
    except ValidationError as exc:
        raise ConfigError(f"invalid run configuration: {exc}") from None
    logger.debug(f"Resolved run config (preset {preset}, ablations {all_ablations}): {merged}")
    return config


def describe_keys(paper_pins: Optional[Mapping[str, Any]] = None) -> Iterable[Tuple[str, str]]:
    """(flag, help text) pairs listing each key's default and, when pinned, its paper-preset value."""
    pins = PRESETS["paper"] if paper_pins is None else paper_pins
    for key, default, description in config_keys():
        text = f"{description} (default: {default}" if description else f"(default: {default}"
        if key in pins:
            text += f"; paper preset: {pins[key]}"
        yield f"--{key}", text + ")"
