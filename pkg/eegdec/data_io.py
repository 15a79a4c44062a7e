"""
EEGR signal files, recording pairs, the dataset manifest and random cropping.

EEGR layout (little-endian):
    magic "EEGR" (4 bytes), version u32 = 1, subject_id u32, sample_rate u32,
    n_channels u32, n_samples u32, then n_channels * n_samples float32 values,
    channel-major. Envelope files use n_channels = 1.
"""
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, NamedTuple, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, PrivateAttr, ValidationError, field_validator

from eegdec.errors import ConfigError, DimensionError, FormatError, TooShortError
from eegdec.tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"EEGR"
VERSION = 1
HEADER = struct.Struct("<4sIIIII")

PathLike = Union[str, Path]
Split = Literal["train", "val", "test"]
SPLITS = ("train", "val", "test")


@dataclass
class RecordingPair:
    """One EEG recording [time, channels] with its speech envelope [time]."""

    subject_id: int
    eeg: Tensor
    envelope: Tensor
    sample_rate_hz: int = 64

    def __post_init__(self):
        if self.eeg.ndim != 2 or self.envelope.ndim != 1:
            raise DimensionError(
                f"expected eeg [time, channels] and envelope [time], got {self.eeg.shape} and {self.envelope.shape}"
            )
        if self.eeg.shape[0] != self.envelope.shape[0]:
            raise DimensionError(
                f"eeg has {self.eeg.shape[0]} samples but envelope has {self.envelope.shape[0]}"
            )

    @property
    def n_samples(self) -> int:
        return self.eeg.shape[0]

    @property
    def n_channels(self) -> int:
        return self.eeg.shape[1]


@dataclass
class SignalFile:
    subject_id: int
    sample_rate_hz: int
    data: np.ndarray  # [channels, samples]


def encode_signal(data: np.ndarray, subject_id: int, sample_rate_hz: int) -> bytes:
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    n_channels, n_samples = data.shape
    header = HEADER.pack(MAGIC, VERSION, subject_id, sample_rate_hz, n_channels, n_samples)
    return header + data.astype("<f4").tobytes(order="C")


def decode_signal(payload: bytes, path: Optional[str] = None) -> SignalFile:
    if len(payload) < HEADER.size:
        raise FormatError(f"truncated header: {len(payload)} of {HEADER.size} bytes", len(payload), path)
    magic, version, subject_id, sample_rate, n_channels, n_samples = HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0, path)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4, path)
    if n_channels == 0 or n_samples == 0:
        raise FormatError(f"empty signal ({n_channels} channels x {n_samples} samples)", 16, path)

    expected = n_channels * n_samples * 4
    available = len(payload) - HEADER.size
    if available < expected:
        raise FormatError(
            f"truncated payload: header declares {expected} bytes, found {available}",
            len(payload),
            path,
        )
    if available > expected:
        raise FormatError("unexpected trailing bytes after payload", HEADER.size + expected, path)
    values = np.frombuffer(payload, dtype="<f4", offset=HEADER.size)
    data = values.astype(np.float64).reshape(n_channels, n_samples)
    return SignalFile(subject_id=subject_id, sample_rate_hz=sample_rate, data=data)


def write_signal(path: PathLike, data: np.ndarray, subject_id: int, sample_rate_hz: int) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_signal(data, subject_id, sample_rate_hz))


def read_signal(path: PathLike) -> SignalFile:
    path = Path(path)
    return decode_signal(path.read_bytes(), str(path))


def read_signal_header(path: PathLike) -> SignalFile:
    """Header fields only; `data` is left empty. Validates that the payload length matches."""
    path = Path(path)
    with path.open("rb") as handle:
        head = handle.read(HEADER.size)
    if len(head) < HEADER.size:
        raise FormatError(f"truncated header: {len(head)} of {HEADER.size} bytes", len(head), str(path))
    magic, version, subject_id, sample_rate, n_channels, n_samples = HEADER.unpack(head)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0, str(path))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4, str(path))
    size = path.stat().st_size
    if size != HEADER.size + n_channels * n_samples * 4:
        raise FormatError(
            f"file size {size} does not match {n_channels} channels x {n_samples} samples",
            min(size, HEADER.size + n_channels * n_samples * 4),
            str(path),
        )
    return SignalFile(subject_id=subject_id, sample_rate_hz=sample_rate, data=np.empty((n_channels, 0)))


def write_recording(eeg_path: PathLike, envelope_path: PathLike, rec: RecordingPair) -> None:
    write_signal(eeg_path, rec.eeg.data.T, rec.subject_id, rec.sample_rate_hz)
    write_signal(envelope_path, rec.envelope.data[None, :], rec.subject_id, rec.sample_rate_hz)


def read_recording(eeg_path: PathLike, envelope_path: PathLike) -> RecordingPair:
    eeg = read_signal(eeg_path)
    envelope = read_signal(envelope_path)
    if envelope.data.shape[0] != 1:
        raise FormatError(f"envelope file has {envelope.data.shape[0]} channels, expected 1", 16, str(envelope_path))
    if eeg.subject_id != envelope.subject_id:
        raise FormatError(
            f"subject id {envelope.subject_id} differs from the EEG file's {eeg.subject_id}", 8, str(envelope_path)
        )
    if eeg.sample_rate_hz != envelope.sample_rate_hz:
        raise FormatError(
            f"sample rate {envelope.sample_rate_hz} differs from the EEG file's {eeg.sample_rate_hz}",
            12,
            str(envelope_path),
        )
    return RecordingPair(
        subject_id=eeg.subject_id,
        eeg=Tensor(eeg.data.T, copy=True),
        envelope=Tensor(envelope.data[0], copy=False),
        sample_rate_hz=eeg.sample_rate_hz,
    )


class ManifestEntry(BaseModel):
    eeg_path: str
    envelope_path: str
    subject_id: int = Field(..., ge=0)
    split: Split


class Manifest(BaseModel):
    """Recording index. Relative paths resolve against the manifest's directory."""

    entries: List[ManifestEntry]
    _root: Path = PrivateAttr(default_factory=Path)

    @field_validator("entries")
    @classmethod
    def subjects_are_dense(cls, entries: List[ManifestEntry]) -> List[ManifestEntry]:
        subjects = {entry.subject_id for entry in entries}
        if subjects and subjects != set(range(max(subjects) + 1)):
            missing = sorted(set(range(max(subjects) + 1)) - subjects)
            raise ValueError(f"subject ids must be dense from 0; missing {missing}")
        return entries

    @property
    def root(self) -> Path:
        return self._root

    @property
    def n_subjects(self) -> int:
        return max((entry.subject_id for entry in self.entries), default=-1) + 1

    def resolve(self, relative: str) -> Path:
        path = Path(relative)
        return path if path.is_absolute() else self._root / path

    def entries_for(self, split: str) -> List[ManifestEntry]:
        return [entry for entry in self.entries if entry.split == split]

    def load(self, entry: ManifestEntry) -> RecordingPair:
        rec = read_recording(self.resolve(entry.eeg_path), self.resolve(entry.envelope_path))
        if rec.subject_id != entry.subject_id:
            raise FormatError(
                f"file declares subject {rec.subject_id} but the manifest says {entry.subject_id}",
                8,
                entry.eeg_path,
            )
        return rec

    def load_split(self, split: str) -> List[RecordingPair]:
        return [self.load(entry) for entry in self.entries_for(split)]

    def eeg_channels(self) -> int:
        if not self.entries:
            raise ConfigError("manifest has no entries")
        return read_signal_header(self.resolve(self.entries[0].eeg_path)).data.shape[0]


def load_manifest(path: PathLike, check_files: bool = True) -> Manifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest {path} is not valid JSON: {exc}") from None
    if isinstance(raw, list):
        raw = {"entries": raw}
    try:
        manifest = Manifest.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid manifest {path}: {exc}") from None
    manifest._root = path.parent

    if check_files:
        for entry in manifest.entries:
            for relative in (entry.eeg_path, entry.envelope_path):
                resolved = manifest.resolve(relative)
                if not resolved.exists():
                    raise ConfigError(f"manifest entry references a missing file: {resolved}")
                read_signal_header(resolved)
    return manifest


def save_manifest(path: PathLike, manifest: Manifest) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([entry.model_dump() for entry in manifest.entries], indent=2))
    manifest._root = path.parent


class Crop(NamedTuple):
    eeg: Tensor  # [segment, channels]
    envelope: Tensor  # [segment]
    offset: int


def random_crop(rec: RecordingPair, segment_samples: int, rng: np.random.Generator) -> Crop:
    """EEG and envelope cropped at one uniformly drawn offset."""
    if rec.n_samples < segment_samples:
        raise TooShortError(
            f"recording of {rec.n_samples} samples is shorter than the {segment_samples}-sample segment"
        )
    offset = int(rng.integers(0, rec.n_samples - segment_samples + 1))
    stop = offset + segment_samples
    return Crop(
        eeg=Tensor(rec.eeg.data[offset:stop]),
        envelope=Tensor(rec.envelope.data[offset:stop]),
        offset=offset,
    )
