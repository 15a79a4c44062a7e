import numpy as np
import pytest

from eegdec import tensor as T
from eegdec.errors import ConfigError, ContractError, DimensionError, SubjectUnknownError
from eegdec.layers import Conv1d, Embedding, LayerNorm, Linear, MultiHeadAttention, dropout
from eegdec.tensor import Tape, Tensor


def test_linear_shapes_and_count(rng):
    layer = Linear(2, 1, rng)
    assert layer.count_parameters() == 3
    out = layer(Tensor(rng.standard_normal((3, 7, 2))))
    assert out.shape == (3, 7, 1)
    with pytest.raises(DimensionError):
        layer(Tensor(np.ones((1, 2, 3))))


def test_conv_kernel_one_is_identity(rng):
    conv = Conv1d(1, 1, 1, rng)
    conv.weight.assign(np.ones((1, 1, 1)))
    conv.bias.assign(np.zeros(1))
    x = Tensor(rng.standard_normal((2, 6, 1)))
    np.testing.assert_array_equal(conv(x).data, x.data)


def test_conv_center_tap_is_identity(rng):
    conv = Conv1d(1, 1, 3, rng)
    conv.weight.assign(np.array([[[0.0, 1.0, 0.0]]]))
    conv.bias.assign(np.zeros(1))
    x = Tensor(rng.standard_normal((1, 5, 1)))
    np.testing.assert_allclose(conv(x).data, x.data)


def test_conv_sliding_window_with_zero_padding(rng):
    conv = Conv1d(1, 1, 3, rng)
    conv.weight.assign(np.ones((1, 1, 3)))
    conv.bias.assign(np.zeros(1))
    out = conv(Tensor(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1)))
    np.testing.assert_allclose(out.data.reshape(-1), [3.0, 6.0, 5.0])


def test_conv_is_cross_correlation(rng):
    conv = Conv1d(1, 1, 3, rng)
    conv.weight.assign(np.array([[[1.0, 0.0, 0.0]]]))
    conv.bias.assign(np.zeros(1))
    out = conv(Tensor(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1)))
    # the first tap reads the previous sample
    np.testing.assert_allclose(out.data.reshape(-1), [0.0, 1.0, 2.0])


def test_conv_rejects_channel_mismatch_and_even_kernel(rng):
    conv = Conv1d(3, 2, 3, rng)
    with pytest.raises(DimensionError):
        conv(Tensor(np.ones((1, 4, 2))))
    with pytest.raises(ConfigError):
        Conv1d(3, 2, 4, rng)


def test_layernorm_constant_vector_is_zero():
    out = LayerNorm(4)(Tensor([[5.0, 5.0, 5.0, 5.0]]))
    np.testing.assert_allclose(out.data, np.zeros((1, 4)), atol=1e-9)


def test_layernorm_unit_pair():
    out = LayerNorm(2, epsilon=1e-12)(Tensor([[1.0, -1.0]]))
    np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-6)


def test_layernorm_statistics_on_random_input(rng):
    out = LayerNorm(16)(Tensor(rng.standard_normal((3, 5, 16)) * 4.0 + 2.0)).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-5)


def test_layernorm_ignores_constant_offset(rng):
    norm = LayerNorm(8)
    x = rng.standard_normal((2, 3, 8))
    np.testing.assert_allclose(norm.normalize(Tensor(x + 3.0)).data, norm.normalize(Tensor(x)).data, atol=1e-9)


def test_layernorm_dimension_mismatch():
    with pytest.raises(DimensionError):
        LayerNorm(4)(Tensor(np.ones((2, 3))))


def test_attention_single_position_passes_value_through(rng):
    attn = MultiHeadAttention(4, 2, rng)
    x = Tensor(rng.standard_normal((3, 1, 4)))
    out, weights = attn.attend(x)
    np.testing.assert_array_equal(weights.data, np.ones((3, 2, 1, 1)))
    np.testing.assert_allclose(out.data, attn.output(attn.value(x)).data, atol=1e-12)


def test_attention_head_split_is_invisible_on_single_position(rng):
    two_heads = MultiHeadAttention(4, 2, rng)
    one_head = MultiHeadAttention(4, 1, rng)
    one_head.load_state_dict(two_heads.state_dict())
    x = Tensor(rng.standard_normal((2, 1, 4)))
    np.testing.assert_allclose(one_head(x).data, two_heads(x).data, atol=1e-12)


def test_attention_weights_are_normalized(rng):
    attn = MultiHeadAttention(6, 3, rng)
    _, weights = attn.attend(Tensor(rng.standard_normal((2, 7, 6))))
    assert weights.shape == (2, 3, 7, 7)
    np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-9)


def test_attention_is_permutation_equivariant(rng):
    attn = MultiHeadAttention(4, 2, rng)
    x = rng.standard_normal((1, 6, 4))
    order = rng.permutation(6)
    out = attn(Tensor(x)).data
    permuted = attn(Tensor(x[:, order])).data
    np.testing.assert_allclose(permuted, out[:, order], atol=1e-12)


def test_attention_config_and_shape_errors(rng):
    with pytest.raises(ConfigError):
        MultiHeadAttention(5, 2, rng)
    with pytest.raises(DimensionError):
        MultiHeadAttention(4, 2, rng)(Tensor(np.ones((1, 3, 6))))


def test_embedding_lookup_returns_exact_row(rng):
    table = Embedding(5, 3, rng)
    np.testing.assert_array_equal(table.lookup(3).data, table.table.data[3])
    assert Embedding(4, 8, rng).count_parameters() == 32


def test_embedding_gradient_reaches_only_looked_up_row(rng):
    table = Embedding(5, 3, rng)
    table.zero_grad()
    with Tape() as tape:
        loss = T.sum_(table.lookup(3) * 2.0)
    tape.backward(loss)
    expected = np.zeros((5, 3))
    expected[3] = 2.0
    np.testing.assert_array_equal(table.table.grad, expected)


def test_embedding_matches_one_hot_product(rng):
    table = Embedding(5, 4, rng)
    for subject_id in range(5):
        one_hot = np.zeros((1, 5))
        one_hot[0, subject_id] = 1.0
        product = T.matmul(Tensor(one_hot), table.table).data[0]
        np.testing.assert_allclose(product, table.lookup(subject_id).data, atol=0)


@pytest.mark.parametrize("subject_id", [-1, 5, 2.0, True])
def test_embedding_rejects_unknown_subjects(rng, subject_id):
    with pytest.raises(SubjectUnknownError):
        Embedding(5, 2, rng).lookup(subject_id)


def test_dropout_identities(rng):
    x = Tensor(rng.standard_normal((2, 4, 3)))
    assert dropout(x, 0.0, True, rng) is x
    assert dropout(x, 0.7, False, None) is x


def test_dropout_preserves_expected_value(rng):
    x = Tensor(np.full(100_000, 2.0))
    out = dropout(x, 0.3, True, rng).data
    assert abs(out.mean() - 2.0) < 0.02
    zeroed = np.mean(out == 0.0)
    assert abs(zeroed - 0.3) < 0.01


def test_dropout_rejects_bad_rates_and_missing_rng(rng):
    x = Tensor(np.ones(4))
    with pytest.raises(ConfigError):
        dropout(x, 1.0, True, rng)
    with pytest.raises(ConfigError):
        dropout(x, -0.1, False, rng)
    with pytest.raises(ContractError):
        dropout(x, 0.5, True, None)


@pytest.mark.parametrize(
    "layer_factory, shape",
    [
        (lambda rng: Linear(3, 5, rng), (2, 7, 3)),
        (lambda rng: Conv1d(3, 5, 5, rng), (2, 7, 3)),
        (lambda rng: LayerNorm(3), (2, 7, 3)),
        (lambda rng: MultiHeadAttention(4, 2, rng), (2, 7, 4)),
    ],
)
def test_layers_preserve_batch_and_time(rng, layer_factory, shape):
    out = layer_factory(rng)(Tensor(rng.standard_normal(shape)))
    assert out.shape[:2] == shape[:2]
