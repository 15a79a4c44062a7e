"""
EEG-to-envelope decoder: pre-conv, optional subject conditioner, a stack of
feed-forward transformer (FFT) blocks and a linear envelope head.
"""
import logging
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from eegdec import tensor as T
from eegdec.errors import ContractError, DimensionError, SubjectUnknownError
from eegdec.layers import Conv1d, Embedding, LayerNorm, Linear, Module, MultiHeadAttention, dropout
from eegdec.seeding import substream
from eegdec.tensor import Tensor

logger = logging.getLogger(__name__)


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    in_channels: int = Field(64, ge=1, description="EEG channel count")
    hidden_dim: int = Field(128, ge=1, description="Width of the pre-conv output and every FFT block")
    n_blocks: int = Field(8, ge=1, description="Number of FFT blocks")
    n_heads: int = Field(2, ge=1, description="Attention heads per block")
    conv_kernel_pre: int = Field(3, ge=1, description="Kernel of the pre-conv layer (odd)")
    ffn_kernel: int = Field(3, ge=1, description="Kernel of both FFN convolutions (odd)")
    ffn_expansion: int = Field(4, ge=1, description="FFN inner width as a multiple of hidden_dim")
    dropout_rate: float = Field(0.1, ge=0.0, lt=1.0, description="Dropout on every residual branch")
    n_subjects: int = Field(0, ge=0, description="Rows of the subject conditioner table")
    use_conditioner: bool = Field(False, description="Add a subject embedding after the pre-conv")
    use_pre_ln: bool = Field(True, description="Layer norm inside residual branches; false = post-LN")
    use_positional_encoding: bool = Field(True, description="Add sinusoidal positions after the pre-conv")
    layernorm_epsilon: float = Field(1e-5, gt=0.0, description="Layer norm variance floor")
    sample_rate_hz: int = Field(64, ge=1, description="Sampling rate of EEG and envelope")
    segment_seconds: float = Field(5.0, gt=0.0, description="Training crop / inference chunk length")

    @model_validator(mode="after")
    def check_consistency(self) -> "ModelConfig":
        if self.hidden_dim % self.n_heads != 0:
            raise ValueError(f"hidden_dim {self.hidden_dim} must be divisible by n_heads {self.n_heads}")
        if self.use_conditioner and self.n_subjects < 1:
            raise ValueError("use_conditioner requires n_subjects >= 1")
        for name in ("conv_kernel_pre", "ffn_kernel"):
            if getattr(self, name) % 2 == 0:
                raise ValueError(f"{name} must be odd so 'same' padding preserves length")
        samples = self.sample_rate_hz * self.segment_seconds
        if samples != int(samples) or samples < 1:
            raise ValueError(
                f"sample_rate_hz * segment_seconds must be a positive integer, got {samples}"
            )
        return self

    @property
    def segment_samples(self) -> int:
        return int(self.sample_rate_hz * self.segment_seconds)


def sinusoidal_encoding(time: int, dim: int) -> np.ndarray:
    """pe[p, 2i] = sin(p / 10000^(2i/dim)), pe[p, 2i+1] = cos(p / 10000^(2i/dim))."""
    positions = np.arange(time, dtype=np.float64)[:, None]
    even = np.arange(0, dim, 2, dtype=np.float64)
    angles = positions / np.power(10000.0, even / dim)
    encoding = np.zeros((time, dim))
    encoding[:, 0::2] = np.sin(angles)
    encoding[:, 1::2] = np.cos(angles[:, : dim // 2])
    return encoding


def add_positional_encoding(h: Tensor) -> Tensor:
    _, time, dim = h.shape
    return h + Tensor(sinusoidal_encoding(time, dim), copy=False)


class FFTBlock(Module):
    """Self-attention sub-layer followed by a two-convolution feed-forward sub-layer."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        dim = config.hidden_dim
        inner = dim * config.ffn_expansion
        self.dropout_rate = config.dropout_rate
        self.ln1 = LayerNorm(dim, config.layernorm_epsilon)
        self.attn = MultiHeadAttention(dim, config.n_heads, rng)
        self.ln2 = LayerNorm(dim, config.layernorm_epsilon)
        self.conv_a = Conv1d(dim, inner, config.ffn_kernel, rng)
        self.conv_b = Conv1d(inner, dim, config.ffn_kernel, rng)

    def _feed_forward(self, h: Tensor) -> Tensor:
        return self.conv_b(T.relu(self.conv_a(h)))

    def forward(
        self,
        h: Tensor,
        use_pre_ln: bool = True,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        if h.ndim != 3 or h.shape[-1] != self.ln1.dim:
            raise DimensionError(f"block expects [batch, time, {self.ln1.dim}], got {h.shape}")
        rate = self.dropout_rate
        if use_pre_ln:
            h = h + dropout(self.attn(self.ln1(h)), rate, training, rng)
            return h + dropout(self._feed_forward(self.ln2(h)), rate, training, rng)
        h = self.ln1(h + dropout(self.attn(h), rate, training, rng))
        return self.ln2(h + dropout(self._feed_forward(h), rate, training, rng))


def block_forward(
    block: FFTBlock,
    h: Tensor,
    use_pre_ln: bool,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    return block.forward(h, use_pre_ln=use_pre_ln, training=training, rng=rng)


class DecoderModel(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        dim = config.hidden_dim
        self.pre_conv = Conv1d(config.in_channels, dim, config.conv_kernel_pre, rng)
        self.conditioner: Optional[Embedding] = (
            Embedding(config.n_subjects, dim, rng) if config.use_conditioner else None
        )
        self.blocks: List[FFTBlock] = [FFTBlock(config, rng) for _ in range(config.n_blocks)]
        # Present in both normalization modes so the parameter count does not depend on
        # the mode; only the pre-LN forward applies it.
        self.final_norm = LayerNorm(dim, config.layernorm_epsilon)
        self.head = Linear(dim, 1, rng)

    @property
    def conditioned(self) -> bool:
        return self.conditioner is not None

    def forward(
        self,
        eeg: Tensor,
        subject_ids: Optional[Sequence[int]] = None,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """
        Decode EEG [batch, time, in_channels] into envelopes [batch, time].

        `subject_ids` is required (one per batch item) when the conditioner is
        enabled and is never read otherwise.
        """
        if eeg.ndim != 3:
            raise DimensionError(f"decoder expects EEG of shape [batch, time, channels], got {eeg.shape}")
        batch, time, _ = eeg.shape
        h = self.pre_conv(eeg)
        if self.conditioner is not None:
            if subject_ids is None:
                raise SubjectUnknownError("the conditioner is enabled but no subject ids were given")
            if len(subject_ids) != batch:
                raise ContractError(f"got {len(subject_ids)} subject ids for a batch of {batch}")
            embedded = self.conditioner.lookup_batch(subject_ids)
            h = h + T.reshape(embedded, (batch, 1, self.config.hidden_dim))
        if self.config.use_positional_encoding:
            h = add_positional_encoding(h)
        for block in self.blocks:
            h = block(h, use_pre_ln=self.config.use_pre_ln, training=training, rng=rng)
        if self.config.use_pre_ln:
            h = self.final_norm(h)
        return T.reshape(self.head(h), (batch, time))


def build_model(config: ModelConfig, seed: int) -> DecoderModel:
    """Fresh model with weights drawn from the seed's `init` stream."""
    return DecoderModel(config, substream(seed, "init"))


def count_parameters(model: Module) -> int:
    return model.count_parameters()
