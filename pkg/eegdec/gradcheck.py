"""
Finite-difference verification of every differentiable building block.

Each check contracts the layer output with a fixed random projection into a
scalar, then compares the tape gradient of every leaf (input and parameters)
with central differences.
"""
import logging
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from eegdec import tensor as T
from eegdec.layers import Conv1d, Embedding, LayerNorm, Linear, MultiHeadAttention
from eegdec.model import DecoderModel, FFTBlock, ModelConfig
from eegdec.objective import LossConfig, total_loss
from eegdec.seeding import substream
from eegdec.tensor import Parameter, Tape, Tensor, no_grad

logger = logging.getLogger(__name__)

Leaves = Dict[str, Parameter]
Builder = Callable[[np.random.Generator], Tuple[Callable[[], Tensor], Leaves]]

STEP = 1e-5


@dataclass(frozen=True)
class GradcheckRow:
    name: str
    max_rel_error: float
    n_checked: int
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def numerical_gradient(f: Callable[[np.ndarray], float], array: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of scalar `f` with respect to every element of `array`."""
    values = np.array(array, dtype=np.float64)
    grad = np.zeros_like(values)
    for index in np.ndindex(values.shape):
        original = values[index]
        values[index] = original + h
        plus = f(values)
        values[index] = original - h
        minus = f(values)
        values[index] = original
        grad[index] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, scale: Optional[float] = None) -> float:
    """
    Max absolute difference over a gradient scale.

    The scale defaults to the larger magnitude of the two arrays. `check_layer`
    passes the largest magnitude over all leaves of a check instead, so a leaf
    whose true gradient is zero is judged against the others, not its own
    round-off.
    """
    if scale is None:
        scale = max(_magnitude(analytic), _magnitude(numeric))
    return float(np.max(np.abs(analytic - numeric))) / max(scale, 1e-12)


def _magnitude(array: np.ndarray) -> float:
    return float(np.max(np.abs(array)))


def _leaf(rng: np.random.Generator, *shape: int) -> Parameter:
    return Parameter(rng.standard_normal(shape))


def check_layer(name: str, build: Builder, seed: int = 0, tolerance: float = 1e-4) -> GradcheckRow:
    rng = substream(seed, f"gradcheck:{name}")
    fn, leaves = build(rng)

    with no_grad():
        sample = fn()
    projection = rng.standard_normal(sample.shape)

    for leaf in leaves.values():
        leaf.zero_grad()
    with Tape() as tape:
        scalar = T.sum_(fn() * Tensor(projection, copy=False))
    tape.backward(scalar)

    def evaluate() -> float:
        with no_grad():
            return float(np.sum(fn().data * projection))

    pairs = []
    for path, leaf in leaves.items():
        original = leaf.numpy()

        def perturbed(values: np.ndarray, leaf: Parameter = leaf) -> float:
            leaf.assign(values)
            return evaluate()

        numeric = numerical_gradient(perturbed, original)
        leaf.assign(original)
        pairs.append((path, leaf.grad, numeric))

    scale = max(max(_magnitude(analytic), _magnitude(numeric)) for _, analytic, numeric in pairs)
    worst = 0.0
    n_checked = 0
    for path, analytic, numeric in pairs:
        error = relative_error(analytic, numeric, scale)
        logger.debug(f"gradcheck {name}/{path}: rel error {error:.3e} over {numeric.size} elements")
        worst = max(worst, error)
        n_checked += numeric.size
    return GradcheckRow(name=name, max_rel_error=worst, n_checked=n_checked, passed=worst < tolerance)


def _elementwise(rng):
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4)

    def fn():
        mixed = T.relu(a) * b + T.exp(a) / (b * b + 1.0) - a
        return mixed + T.sqrt(T.abs_(a) + 1.0) + T.mean(a, 0, keepdims=True)

    return fn, {"a": a, "b": b}


def _matmul(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5)
    return (lambda: T.matmul(a, b)), {"a": a, "b": b}


def _softmax(rng):
    a = _leaf(rng, 2, 3, 5)
    return (lambda: T.softmax(a, axis=-1)), {"a": a}


def _module_row(module, rng, shape):
    x = _leaf(rng, *shape)
    leaves = {"input": x}
    leaves.update(dict(module.named_parameters()))
    return (lambda: module(x)), leaves


def _conv1d(rng):
    return _module_row(Conv1d(3, 4, 3, rng), rng, (2, 5, 3))


def _layernorm(rng):
    norm = LayerNorm(6)
    norm.gain.assign(rng.standard_normal(6))
    norm.shift.assign(rng.standard_normal(6))
    return _module_row(norm, rng, (2, 4, 6))


def _attention(rng):
    return _module_row(MultiHeadAttention(4, 2, rng), rng, (2, 5, 4))


def _linear(rng):
    return _module_row(Linear(4, 3, rng), rng, (2, 5, 4))


def _embedding(rng):
    embedding = Embedding(3, 4, rng, std=1.0)
    return (lambda: embedding.lookup_batch([0, 2, 2])), dict(embedding.named_parameters())


def _small_config(**overrides) -> ModelConfig:
    values = dict(
        in_channels=3,
        hidden_dim=4,
        n_blocks=1,
        n_heads=2,
        ffn_expansion=2,
        dropout_rate=0.0,
        segment_seconds=1.0,
    )
    values.update(overrides)
    return ModelConfig(**values)


def _block(use_pre_ln: bool):
    def build(rng):
        block = FFTBlock(_small_config(), rng)
        x = _leaf(rng, 2, 5, 4)
        leaves = {"input": x}
        leaves.update(dict(block.named_parameters()))
        return (lambda: block(x, use_pre_ln=use_pre_ln)), leaves

    return build


def _full_model(rng):
    config = _small_config(hidden_dim=16, n_blocks=2, n_subjects=3, use_conditioner=True)
    model = DecoderModel(config, rng)
    eeg = _leaf(rng, 2, 5, 3)
    leaves = {"input": eeg}
    leaves.update(dict(model.named_parameters()))
    return (lambda: model(eeg, [0, 2])), leaves


def _total_loss(rng):
    pred = _leaf(rng, 2, 6)
    target = Tensor(rng.standard_normal((2, 6)))
    cfg = LossConfig(alpha=0.2)
    return (lambda: total_loss(pred, target, cfg)), {"pred": pred}


CHECKS: List[Tuple[str, Builder]] = [
    ("elementwise", _elementwise),
    ("matmul", _matmul),
    ("softmax", _softmax),
    ("conv1d", _conv1d),
    ("layernorm", _layernorm),
    ("attention", _attention),
    ("linear", _linear),
    ("embedding", _embedding),
    ("fft_block_pre_ln", _block(True)),
    ("fft_block_post_ln", _block(False)),
    ("model_2_blocks", _full_model),
    ("total_loss", _total_loss),
]


def run_gradcheck(tolerance: float = 1e-4, seed: int = 0) -> List[GradcheckRow]:
    rows = []
    for name, build in CHECKS:
        row = check_layer(name, build, seed, tolerance)
        logger.info(
            f"gradcheck {name}: max rel error {row.max_rel_error:.2e} over {row.n_checked} values "
            f"-> {'ok' if row.passed else 'FAIL'}"
        )
        rows.append(row)
    return rows
