"""
EDCK checkpoint container.

Layout (little-endian):
    magic        5 bytes  b"EDCK\\x01"
    header_len   u32
    header       header_len bytes of UTF-8 JSON ({"model_config": ..., optional "train_state": ...})
    n_entries    u32
    entries      n_entries x (key_len u32, key UTF-8, ndim u32, ndim x u32 extents, float64 payload)

Model parameters use their dotted paths as keys; optimizer moments live under the
parallel `optim.m/` and `optim.v/` namespaces.
"""
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from eegdec.errors import FormatError
from eegdec.model import DecoderModel, ModelConfig

logger = logging.getLogger(__name__)

MAGIC = b"EDCK\x01"
_U32 = struct.Struct("<I")

PathLike = Union[str, Path]


@dataclass
class Checkpoint:
    model_config: ModelConfig
    arrays: Dict[str, np.ndarray]
    header: Dict[str, Any] = field(default_factory=dict)

    @property
    def train_state(self) -> Optional[Dict[str, Any]]:
        return self.header.get("train_state")

    def parameters(self) -> Dict[str, np.ndarray]:
        return {key: value for key, value in self.arrays.items() if not key.startswith("optim.")}

    def namespace(self, prefix: str) -> Dict[str, np.ndarray]:
        return {key[len(prefix):]: value for key, value in self.arrays.items() if key.startswith(prefix)}


def encode_checkpoint(
    model_config: ModelConfig,
    arrays: Dict[str, np.ndarray],
    train_state: Optional[Dict[str, Any]] = None,
) -> bytes:
    header: Dict[str, Any] = {"model_config": model_config.model_dump()}
    if train_state is not None:
        header["train_state"] = train_state
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    chunks = [MAGIC, _U32.pack(len(header_bytes)), header_bytes, _U32.pack(len(arrays))]
    for key, value in arrays.items():
        value = np.asarray(value, dtype=np.float64)
        key_bytes = key.encode("utf-8")
        chunks.append(_U32.pack(len(key_bytes)))
        chunks.append(key_bytes)
        chunks.append(_U32.pack(value.ndim))
        chunks.extend(_U32.pack(extent) for extent in value.shape)
        chunks.append(value.astype("<f8").tobytes(order="C"))
    return b"".join(chunks)


class _Reader:
    def __init__(self, payload: bytes, path: Optional[str]):
        self.payload = payload
        self.offset = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.payload):
            raise FormatError(
                f"truncated checkpoint while reading {what}: need {n} bytes, "
                f"{len(self.payload) - self.offset} left",
                self.offset,
                self.path,
            )
        chunk = self.payload[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def decode_checkpoint(payload: bytes, path: Optional[str] = None) -> Checkpoint:
    reader = _Reader(payload, path)
    magic = reader.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}, expected {MAGIC!r}", 0, path)

    header_offset = reader.offset
    header_bytes = reader.take(reader.u32("header length"), "header")
    try:
        header = json.loads(header_bytes.decode("utf-8"))
        model_config = ModelConfig.model_validate(header["model_config"])
    except (ValueError, KeyError) as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}", header_offset, path) from None

    arrays: Dict[str, np.ndarray] = {}
    for _ in range(reader.u32("entry count")):
        key = reader.take(reader.u32("key length"), "key").decode("utf-8")
        ndim = reader.u32("rank")
        shape = tuple(reader.u32("extent") for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        raw = reader.take(8 * count, f"payload of {key}")
        arrays[key] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    if reader.offset != len(payload):
        raise FormatError("unexpected trailing bytes after checkpoint entries", reader.offset, path)
    return Checkpoint(model_config=model_config, arrays=arrays, header=header)


def save_checkpoint(
    path: PathLike,
    model: DecoderModel,
    train_state: Optional[Dict[str, Any]] = None,
    extra_arrays: Optional[Dict[str, np.ndarray]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = model.state_dict()
    if extra_arrays:
        arrays.update(extra_arrays)
    path.write_bytes(encode_checkpoint(model.config, arrays, train_state))
    logger.debug(f"Wrote checkpoint {path} ({len(arrays)} arrays)")
    return path


def load_checkpoint(path: PathLike) -> Checkpoint:
    path = Path(path)
    return decode_checkpoint(path.read_bytes(), str(path))


def load_model(path: PathLike) -> DecoderModel:
    """Rebuild a model from a checkpoint; initial weights are irrelevant and overwritten."""
    checkpoint = load_checkpoint(path)
    model = DecoderModel(checkpoint.model_config, np.random.default_rng(0))
    model.load_state_dict(checkpoint.parameters())
    return model
