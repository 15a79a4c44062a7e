"""
Parameterized layers: linear, 1-D convolution, layer normalization,
multi-head self-attention, subject embedding and dropout.

All layers consume and produce [batch, time, features] tensors and preserve the
batch and time extents.
"""
import logging
import math
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy as np

from eegdec import tensor as T
from eegdec.errors import ConfigError, ContractError, DimensionError, SubjectUnknownError
from eegdec.tensor import Parameter, Tensor

logger = logging.getLogger(__name__)


class Module:
    """Parameter container; parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{index}.")

    def parameters(self) -> Iterator[Parameter]:
        for _, parameter in self.named_parameters():
            yield parameter

    def zero_grad(self) -> None:
        T.zero_grads(self.parameters())

    def count_parameters(self) -> int:
        return sum(parameter.size for parameter in self.parameters())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {path: parameter.numpy() for path, parameter in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ContractError(f"state mismatch: missing {missing}, unexpected {unexpected}")
        for path, parameter in own.items():
            parameter.assign(state[path])

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_init(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=tuple(shape))


def _check_last_extent(x: Tensor, expected: int, what: str) -> None:
    if x.shape[-1] != expected:
        raise DimensionError(f"{what} expects last extent {expected}, got input shape {x.shape}")


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(uniform_init(rng, (in_features, out_features), in_features))
        self.bias = Parameter(uniform_init(rng, (out_features,), in_features))

    def forward(self, x: Tensor) -> Tensor:
        _check_last_extent(x, self.in_features, "linear layer")
        return T.matmul(x, self.weight) + self.bias


class Conv1d(Module):
    """
    "Same"-padded cross-correlation over time.

    weight: [out_channels, in_channels, kernel]. The kernel must be odd so the
    output keeps the input's time extent.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator):
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ConfigError(f"conv kernel size must be odd and positive, got {kernel_size}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        fan_in = in_channels * kernel_size
        self.weight = Parameter(uniform_init(rng, (out_channels, in_channels, kernel_size), fan_in))
        self.bias = Parameter(uniform_init(rng, (out_channels,), fan_in))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3:
            raise DimensionError(f"conv1d expects [batch, time, channels], got {x.shape}")
        _check_last_extent(x, self.in_channels, "conv1d")
        time = x.shape[1]
        pad = self.kernel_size // 2
        if pad:
            padded = T.pad_axis(x, 1, pad, pad)
            # im2col: column k*in_channels + c holds x[t + k - pad, c]
            columns = T.concat(
                [T.slice_axis(padded, 1, k, k + time) for k in range(self.kernel_size)], axis=-1
            )
        else:
            columns = x
        kernel = T.reshape(
            T.transpose(self.weight, (2, 1, 0)),
            (self.kernel_size * self.in_channels, self.out_channels),
        )
        return T.matmul(columns, kernel) + self.bias


class LayerNorm(Module):
    """Per-position normalization over the last axis, with biased variance."""

    def __init__(self, dim: int, epsilon: float = 1e-5):
        if epsilon <= 0:
            raise ConfigError(f"layer norm epsilon must be positive, got {epsilon}")
        self.dim = dim
        self.epsilon = epsilon
        self.gain = Parameter(np.ones(dim))
        self.shift = Parameter(np.zeros(dim))

    def normalize(self, x: Tensor) -> Tensor:
        _check_last_extent(x, self.dim, "layer norm")
        centered = x - T.mean(x, -1, keepdims=True)
        variance = T.mean(centered * centered, -1, keepdims=True)
        return centered / T.sqrt(variance + self.epsilon)

    def forward(self, x: Tensor) -> Tensor:
        return self.normalize(x) * self.gain + self.shift


class MultiHeadAttention(Module):
    """Unmasked scaled dot-product self-attention; no positional information of its own."""

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator):
        if n_heads < 1 or dim % n_heads != 0:
            raise ConfigError(f"dim {dim} is not divisible by n_heads {n_heads}")
        self.dim = dim
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.output = Linear(dim, dim, rng)

    def _split_heads(self, x: Tensor) -> Tensor:
        batch, time, _ = x.shape
        return T.transpose(T.reshape(x, (batch, time, self.n_heads, self.head_dim)), (0, 2, 1, 3))

    def attend(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        """Returns the projected output [batch, time, dim] and weights [batch, heads, time, time]."""
        if x.ndim != 3:
            raise DimensionError(f"attention expects [batch, time, dim], got {x.shape}")
        _check_last_extent(x, self.dim, "attention")
        batch, time, _ = x.shape
        q = self._split_heads(self.query(x))
        k = self._split_heads(self.key(x))
        v = self._split_heads(self.value(x))
        scores = T.scalar_mul(T.matmul(q, T.swap_last(k)), 1.0 / math.sqrt(self.head_dim))
        weights = T.softmax(scores, axis=-1)
        context = T.transpose(T.matmul(weights, v), (0, 2, 1, 3))
        merged = T.reshape(context, (batch, time, self.dim))
        return self.output(merged), weights

    def forward(self, x: Tensor) -> Tensor:
        out, _ = self.attend(x)
        return out


class Embedding(Module):
    """Subject embedding table [n_subjects, dim]."""

    def __init__(self, n_subjects: int, dim: int, rng: np.random.Generator, std: float = 0.02):
        if n_subjects < 1:
            raise ConfigError(f"embedding needs at least one row, got {n_subjects}")
        self.n_subjects = n_subjects
        self.dim = dim
        self.table = Parameter(rng.normal(0.0, std, size=(n_subjects, dim)))

    def _check(self, subject_id: int) -> int:
        if isinstance(subject_id, bool) or not isinstance(subject_id, (int, np.integer)):
            raise SubjectUnknownError(f"subject id must be an integer, got {subject_id!r}")
        if not 0 <= subject_id < self.n_subjects:
            raise SubjectUnknownError(
                f"subject id {subject_id} is outside the known range 0..{self.n_subjects - 1}"
            )
        return int(subject_id)

    def lookup(self, subject_id: int) -> Tensor:
        row = T.take_rows(self.table, [self._check(subject_id)])
        return T.reshape(row, (self.dim,))

    def lookup_batch(self, subject_ids: Sequence[int]) -> Tensor:
        return T.take_rows(self.table, [self._check(subject_id) for subject_id in subject_ids])

    def forward(self, subject_ids: Sequence[int]) -> Tensor:
        return self.lookup_batch(subject_ids)


def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout: surviving activations are scaled by 1 / (1 - rate)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs a random generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(mask, copy=False)
