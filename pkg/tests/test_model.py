import numpy as np
import pytest
from pydantic import ValidationError

from conftest import tiny_config
from eegdec.errors import DimensionError, SubjectUnknownError
from eegdec.model import (
    DecoderModel,
    FFTBlock,
    ModelConfig,
    block_forward,
    build_model,
    count_parameters,
    sinusoidal_encoding,
)
from eegdec.seeding import substream
from eegdec.tensor import Tensor


def expected_parameter_count(config: ModelConfig) -> int:
    dim = config.hidden_dim
    inner = dim * config.ffn_expansion
    pre_conv = config.in_channels * dim * config.conv_kernel_pre + dim
    conditioner = config.n_subjects * dim if config.use_conditioner else 0
    block = (
        2 * (2 * dim)
        + 4 * (dim * dim + dim)
        + (dim * inner * config.ffn_kernel + inner)
        + (inner * dim * config.ffn_kernel + dim)
    )
    return pre_conv + conditioner + config.n_blocks * block + 2 * dim + dim + 1


def zero_block(block: FFTBlock) -> None:
    for path, parameter in block.named_parameters():
        if not path.startswith("ln"):
            parameter.assign(np.zeros(parameter.shape))


def test_default_shape_contract(rng):
    config = ModelConfig(hidden_dim=16, n_blocks=1)
    model = build_model(config, seed=0)
    out = model(Tensor(rng.standard_normal((2, 320, 64))))
    assert out.shape == (2, 320)


@pytest.mark.parametrize(
    "config",
    [
        ModelConfig(),
        ModelConfig(n_subjects=85, use_conditioner=True),
        tiny_config(),
        tiny_config(use_pre_ln=False, ffn_kernel=5),
    ],
)
def test_parameter_count_matches_closed_form(config):
    model = DecoderModel(config, substream(0, "init"))
    assert count_parameters(model) == expected_parameter_count(config)


def test_parameter_count_does_not_depend_on_norm_placement():
    pre = build_model(tiny_config(), seed=0)
    post = build_model(tiny_config(use_pre_ln=False), seed=0)
    assert count_parameters(pre) == count_parameters(post)


def test_conditioner_presence_follows_config():
    assert build_model(tiny_config(), seed=0).conditioned
    model = build_model(tiny_config(use_conditioner=False), seed=0)
    assert not model.conditioned
    assert len(model.blocks) == 2


def test_distinct_subjects_give_distinct_outputs(rng):
    model = build_model(tiny_config(), seed=0)
    eeg = rng.standard_normal((1, 12, 4))
    out = model(Tensor(np.concatenate([eeg, eeg])), [0, 1]).data
    assert not np.allclose(out[0], out[1])


def test_zeroed_conditioner_row_matches_unconditioned_model(rng):
    conditioned = build_model(tiny_config(), seed=0)
    plain = build_model(tiny_config(use_conditioner=False), seed=1)
    plain.load_state_dict(
        {path: value for path, value in conditioned.state_dict().items() if not path.startswith("conditioner.")}
    )
    table = conditioned.conditioner.table.numpy()
    table[1] = 0.0
    conditioned.conditioner.table.assign(table)

    eeg = Tensor(rng.standard_normal((1, 10, 4)))
    np.testing.assert_allclose(conditioned(eeg, [1]).data, plain(eeg).data, atol=1e-9)


def test_conditioner_locality(rng):
    model = build_model(tiny_config(), seed=0)
    eeg = Tensor(rng.standard_normal((3, 8, 4)))
    ids = [0, 1, 0]
    before = model(eeg, ids).data

    table = model.conditioner.table.numpy()
    # a uniform shift would vanish under layer norm
    table[1] += rng.standard_normal(table.shape[1])
    model.conditioner.table.assign(table)
    after = model(eeg, ids).data

    np.testing.assert_allclose(after[[0, 2]], before[[0, 2]], atol=1e-12)
    assert not np.allclose(after[1], before[1])


def test_batch_independence(rng):
    model = build_model(tiny_config(), seed=0)
    eeg = rng.standard_normal((3, 9, 4))
    ids = [1, 0, 1]
    batched = model(Tensor(eeg), ids).data
    for index in range(3):
        single = model(Tensor(eeg[index : index + 1]), [ids[index]]).data
        np.testing.assert_allclose(batched[index], single[0], atol=1e-9)


def test_forward_is_deterministic(rng):
    eeg = Tensor(rng.standard_normal((2, 16, 4)))
    first = build_model(tiny_config(), seed=7)(eeg, [0, 1]).data
    second = build_model(tiny_config(), seed=7)(eeg, [0, 1]).data
    assert np.array_equal(first, second)


def test_training_forward_uses_dropout(rng):
    model = build_model(tiny_config(dropout_rate=0.5), seed=0)
    eeg = Tensor(rng.standard_normal((1, 16, 4)))
    eval_out = model(eeg, [0]).data
    train_out = model(eeg, [0], training=True, rng=substream(0, "dropout")).data
    assert not np.allclose(eval_out, train_out)


def test_dropout_only_touches_sublayer_outputs(rng):
    model = build_model(tiny_config(dropout_rate=0.5), seed=0)
    for block in model.blocks:
        zero_block(block)
    eeg = Tensor(rng.standard_normal((1, 16, 4)))
    eval_out = model(eeg, [1]).data
    train_out = model(eeg, [1], training=True, rng=substream(0, "dropout")).data
    np.testing.assert_array_equal(train_out, eval_out)


def test_forward_errors(rng):
    model = build_model(tiny_config(), seed=0)
    eeg = Tensor(rng.standard_normal((2, 8, 4)))
    with pytest.raises(SubjectUnknownError):
        model(eeg)
    with pytest.raises(SubjectUnknownError):
        model(eeg, [0, 2])
    with pytest.raises(DimensionError):
        model(Tensor(rng.standard_normal((2, 8, 5))), [0, 1])
    with pytest.raises(DimensionError):
        model(Tensor(rng.standard_normal((8, 4))), [0])


def test_unconditioned_model_never_reads_subject_ids(rng):
    model = build_model(tiny_config(use_conditioner=False), seed=0)
    out = model(Tensor(rng.standard_normal((1, 8, 4))), [999])
    assert out.shape == (1, 8)


def test_zeroed_pre_ln_block_is_identity(rng):
    block = FFTBlock(tiny_config(), rng)
    zero_block(block)
    h = Tensor(rng.standard_normal((2, 6, 8)))
    np.testing.assert_array_equal(block_forward(block, h, use_pre_ln=True).data, h.data)


def test_zeroed_post_ln_block_still_normalizes(rng):
    block = FFTBlock(tiny_config(), rng)
    zero_block(block)
    h = Tensor(rng.standard_normal((2, 6, 8)) * 3.0 + 1.0)
    out = block_forward(block, h, use_pre_ln=False).data
    assert not np.allclose(out, h.data)
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-9)


def test_block_rejects_wrong_width(rng):
    block = FFTBlock(tiny_config(), rng)
    with pytest.raises(DimensionError):
        block(Tensor(np.ones((1, 4, 6))))


def test_positional_encoding_values():
    encoding = sinusoidal_encoding(5, 6)
    np.testing.assert_array_equal(encoding[0, 0::2], 0.0)
    np.testing.assert_array_equal(encoding[0, 1::2], 1.0)
    for p in range(5):
        for i in range(3):
            assert encoding[p, 2 * i] == pytest.approx(np.sin(p / 10000 ** (2 * i / 6)))
            assert encoding[p, 2 * i + 1] == pytest.approx(np.cos(p / 10000 ** (2 * i / 6)))


def test_without_positions_the_model_is_permutation_equivariant(rng):
    config = tiny_config(use_positional_encoding=False, conv_kernel_pre=1, ffn_kernel=1)
    model = build_model(config, seed=0)
    eeg = rng.standard_normal((1, 7, 4))
    order = rng.permutation(7)
    out = model(Tensor(eeg), [0]).data
    permuted = model(Tensor(eeg[:, order]), [0]).data
    np.testing.assert_allclose(permuted, out[:, order], atol=1e-9)


@pytest.mark.parametrize(
    "overrides",
    [
        dict(hidden_dim=10, n_heads=3),
        dict(use_conditioner=True, n_subjects=0),
        dict(ffn_kernel=4),
        dict(sample_rate_hz=64, segment_seconds=0.01),
        dict(dropout_rate=1.0),
        dict(unknown_field=1),
    ],
)
def test_invalid_configs_are_rejected(overrides):
    with pytest.raises(ValidationError):
        ModelConfig(**overrides)


def test_default_segment_is_320_samples():
    assert ModelConfig().segment_samples == 320
