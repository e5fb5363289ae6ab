import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ddxt import tensor as T
from ddxt.errors import ContractError, DegenerateError, DimensionError, NumericError, ParameterError


def leaf(x, dtype=np.float64):
    return T.Tensor(np.asarray(x, dtype=dtype), requires_grad=True)


def test_default_dtype_is_float32_and_float64_is_kept():
    assert T.Tensor([1, 2]).dtype == np.float32
    assert T.Tensor(np.zeros(2)).dtype == np.float64
    assert (leaf([1.0]) * 2.0).dtype == np.float64


def test_broadcast_gradient_is_reduced_to_input_shape():
    a, b = leaf(np.ones((2, 3))), leaf(np.ones(3))
    T.backward((a * b).sum())
    assert b.grad.shape == (3,)
    np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])


def test_gradients_accumulate_across_backward_calls():
    x = leaf([1.0, 2.0])
    T.backward((x * x).sum())
    T.backward((x * 3.0).sum())
    np.testing.assert_allclose(x.grad, [2 + 3, 4 + 3])
    x.zero_grad()
    assert x.grad is None


def test_shared_subexpression_gradient():
    x = leaf(3.0)
    y = x * x
    T.backward(y * y + y)  # x^4 + x^2
    assert x.grad == pytest.approx(4 * 27 + 6)


def test_backward_rejects_non_scalar_and_constant_loss():
    with pytest.raises(ContractError):
        T.backward(leaf([1.0, 2.0]) * 2.0)
    with pytest.raises(ContractError):
        T.backward(T.Tensor(1.0))


def test_graph_cannot_be_replayed():
    x = leaf([1.0, 2.0])
    loss = (x * x).sum()
    T.backward(loss)
    with pytest.raises(ContractError, match="consumed"):
        T.backward(loss)


def test_tape_is_topological():
    x = leaf([1.0])
    y = x * 2.0
    z = y + x
    tape = T.Tape.record(z.sum())
    pos = {id(n): i for i, n in enumerate(tape.nodes)}
    assert pos[id(x)] < pos[id(y)] < pos[id(z)]


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._parents == ()
    assert T.is_grad_enabled()


def test_debug_mode_flags_nan():
    x = T.Tensor(np.array([-1.0]), requires_grad=True)
    with T.debug_mode(), pytest.raises(NumericError), np.errstate(divide="ignore", invalid="ignore"):
        x / T.Tensor(np.array([0.0])) * 0.0
    x / T.Tensor(np.array([2.0]))  # fine outside debug mode


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        leaf(np.ones((2, 3))) @ leaf(np.ones((4, 5)))


def test_softmax_masked_entries_are_exact_zero():
    x = T.Tensor(np.array([[1.0, 1e4, -3.0]]))
    y = T.softmax_last_dim(x, np.array([[True, False, True]]))
    assert y.data[0, 1] == 0.0
    assert y.data.sum() == pytest.approx(1.0)


def test_softmax_fully_masked_row_raises():
    with pytest.raises(DegenerateError):
        T.softmax_last_dim(T.Tensor(np.zeros((2, 3))), np.array([[True, False, False], [False] * 3]))


def test_softmax_is_stable_for_large_logits():
    y = T.softmax_last_dim(T.Tensor(np.array([1000.0, 1000.0], dtype=np.float32)))
    np.testing.assert_allclose(y.data, [0.5, 0.5])


def test_layer_norm_output_statistics():
    x = T.Tensor(np.random.default_rng(0).normal(3.0, 5.0, size=(4, 32)))
    y = T.layer_norm(x, T.Tensor(np.ones(32)), T.Tensor(np.zeros(32))).data
    np.testing.assert_allclose(y.mean(axis=-1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1, rtol=1e-5)


def test_gelu_matches_tanh_formula():
    v = np.linspace(-4, 4, 17)
    expected = [0.5 * a * (1 + math.tanh(math.sqrt(2 / math.pi) * (a + 0.044715 * a**3))) for a in v]
    np.testing.assert_allclose(T.gelu(T.Tensor(v)).data, expected, rtol=1e-10, atol=1e-15)


def test_embedding_out_of_range_names_id():
    with pytest.raises(IndexError, match="17"):
        T.embedding_lookup(T.Tensor(np.zeros((5, 2))), np.array([1, 17]))


def test_embedding_repeated_ids_accumulate():
    table = leaf(np.zeros((3, 2)))
    T.backward(T.embedding_lookup(table, np.array([1, 1, 2])).sum())
    np.testing.assert_array_equal(table.grad, [[0, 0], [2, 2], [1, 1]])


def test_dropout_modes():
    x = T.Tensor(np.ones((200, 50)))
    assert T.dropout(x, 0.5, False, None) is x
    assert T.dropout(x, 0.0, True, None) is x
    with pytest.raises(ParameterError):
        T.dropout(x, 1.0, True, np.random.default_rng(0))
    with pytest.raises(ParameterError):
        T.dropout(x, 0.2, True, None)
    y = T.dropout(x, 0.2, True, np.random.default_rng(0)).data
    assert set(np.unique(y)) == {0.0, 1.25}
    assert y.mean() == pytest.approx(1.0, abs=0.02)


def test_cross_entropy_value_and_ignore():
    logits = np.array([[2.0, 0.5, -1.0], [0.0, 0.0, 0.0], [1.0, 3.0, 0.0]])
    targets = np.array([0, 0, 1])
    loss = T.masked_cross_entropy(T.Tensor(logits), targets, ignore_id=0).item()
    row = logits[2]
    assert loss == pytest.approx(math.log(np.exp(row).sum()) - row[1])
    with pytest.raises(DegenerateError):
        T.masked_cross_entropy(T.Tensor(logits), np.zeros(3, dtype=int), ignore_id=0)
    with pytest.raises(IndexError):
        T.masked_cross_entropy(T.Tensor(logits), np.array([0, 1, 5]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    y = T.softmax_last_dim(T.Tensor(x)).data
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, rtol=1e-12)
    assert (y >= 0).all()


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 4), elements=st.floats(-10, 10)),
       arrays(np.float64, (4,), elements=st.floats(-10, 10)))
def test_add_mul_match_numpy(a, b):
    np.testing.assert_array_equal((T.Tensor(a) + T.Tensor(b)).data, a + b)
    np.testing.assert_array_equal((T.Tensor(a) * T.Tensor(b)).data, a * b)
