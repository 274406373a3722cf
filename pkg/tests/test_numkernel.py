import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from streamintent.numkernel import (
    Dense,
    Embedding,
    LSTMLayer,
    LSTMStack,
    NumericError,
    Parameter,
    RecurrentState,
    dense_forward,
    dropout,
    embed_forward,
    grad_check,
    lstm_sequence_forward,
    lstm_step,
    sigmoid,
    softmax,
)


def rng(seed=0):
    return np.random.default_rng(seed)


def test_embedding_row_selection():
    emb = Parameter("e", np.eye(3))
    assert np.array_equal(embed_forward(1, emb), [0.0, 1.0, 0.0])
    assert not embed_forward(2, Parameter("z", np.zeros((3, 4)))).any()
    with pytest.raises(IndexError):
        embed_forward(3, emb)


def test_embedding_backward_accumulates_repeated_ids():
    e = Embedding(5, 2, rng(), np.float64)
    e.backward(np.array([[1, 1, 3]]), np.ones((1, 3, 2)))
    assert np.array_equal(e.weight.grad[1], [2.0, 2.0])
    assert np.array_equal(e.weight.grad[3], [1.0, 1.0])
    assert not e.weight.grad[[0, 2, 4]].any()


def test_lstm_zero_fixed_point():
    layer = LSTMLayer(3, 4, rng(), np.float64)
    for p in layer.parameters():
        p.value[...] = 0
    h, c, _ = layer.step(np.zeros((1, 3)), np.zeros((1, 4)), np.zeros((1, 4)))
    assert not h.any() and not c.any()


def test_lstm_pure_memory_cell():
    layer = LSTMLayer(1, 1, rng(), np.float64)
    for p in layer.parameters():
        p.value[...] = 0
    layer.b.value[0, 1] = 30.0  # forget gate saturated open
    _, c, _ = layer.step(np.zeros((1, 1)), np.zeros((1, 1)), np.ones((1, 1)))
    assert c[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_forget_bias_initialised_to_one():
    layer = LSTMLayer(3, 4, rng(), np.float32)
    assert np.all(layer.b.value[0, 4:8] == 1.0)
    others = np.concatenate([layer.b.value[0, :4], layer.b.value[0, 8:]])
    assert np.all(np.abs(others) <= 0.1)


def test_lstm_step_only_touches_its_layer():
    stack = LSTMStack(3, 4, 2, rng(), np.float64)
    state = stack.zero_state()
    h, new = lstm_step(np.ones(3), state, stack.layers[0], 0)
    assert new.layers[1][0] is state.layers[1][0]
    assert np.array_equal(new.layers[0][0], h)


def test_lstm_step_rejects_nan():
    stack = LSTMStack(3, 4, 1, rng(), np.float64)
    with pytest.raises(NumericError):
        lstm_step(np.array([np.nan, 0, 0]), stack.zero_state(), stack.layers[0])


def test_dense_zero_sigmoid_and_softmax():
    W = Parameter("W", np.zeros((4, 3)))
    b = Parameter("b", np.zeros((1, 3)))
    h = np.arange(8.0).reshape(2, 4)
    assert np.all(dense_forward(h, W, b, "sigmoid") == 0.5)
    assert np.allclose(softmax(np.zeros(3)), [1 / 3] * 3)
    with pytest.raises(ValueError):
        dense_forward(h, W, b, "relu")


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 8)),
              elements=st.floats(-1e3, 1e3)))
def test_softmax_is_a_simplex_point(z):
    p = softmax(z)
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-6)


@given(arrays(np.float64, 6, elements=st.floats(-800, 800)))
def test_sigmoid_finite_and_bounded(z):
    p = sigmoid(z)
    assert np.all(np.isfinite(p)) and np.all((p >= 0) & (p <= 1))


def test_dense_gradient_matches_finite_differences():
    d = Dense(3, 4, rng(1), np.float64, zero_init=False)
    h = rng(2).normal(size=(5, 3))
    target = rng(3).normal(size=(5, 4))

    def closure():
        for p in d.parameters():
            p.zero_grad()
        z = d.forward(h)
        d.backward(h, 2 * (z - target))
        return float(((z - target) ** 2).sum())

    assert grad_check(closure, d.parameters()) < 1e-4


def test_dropout_modes():
    h = np.ones((3, 3), np.float32)
    assert dropout(h, 0.0, "train", rng()) is h
    assert dropout(h, 0.9, "eval") is h
    out = dropout(np.ones(100_000, np.float32), 0.25, "train", rng(7))
    assert abs(out.mean() - 1.0) < 0.02
    assert set(np.unique(out)) <= {0.0, np.float32(1 / 0.75)}


def test_dropout_requires_rng_in_train_mode():
    with pytest.raises(ValueError):
        dropout(np.ones(3), 0.5, "train", None)


def test_grad_check_linear_closure_is_exact():
    p = Parameter("theta", rng().normal(size=(3, 2)))

    def closure():
        p.grad[...] = 1.0
        return float(p.value.sum())

    assert grad_check(closure, [p]) < 1e-8


def test_grad_check_detects_corruption():
    p = Parameter("theta", rng().normal(size=(2, 2)))

    def closure():
        p.grad[...] = 2 * p.value * 1.5
        return float((p.value ** 2).sum())

    assert grad_check(closure, [p]) > 1e-2


def _stack_closure(stack, xs, mask, weights):
    def closure():
        for p in stack.parameters():
            p.zero_grad()
        out, final, cache = stack.forward(xs, mask)
        stack.backward(cache, weights, None)
        return float((out * weights).sum())
    return closure


def test_lstm_stack_gradients_with_mask():
    stack = LSTMStack(3, 4, 2, rng(5), np.float64)
    r = rng(6)
    xs = r.normal(size=(2, 5, 3))
    mask = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]], bool)
    weights = r.normal(size=(2, 5, 4))
    assert grad_check(_stack_closure(stack, xs, mask, weights), stack.parameters()) < 1e-6


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), T=st.integers(1, 9))
def test_streaming_equals_batch_forward_bitwise(seed, T):
    r = rng(seed)
    stack = LSTMStack(4, 5, 2, r, np.float32)
    xs = r.normal(size=(1, T, 4)).astype(np.float32)
    batch = lstm_sequence_forward(xs, stack)
    state = stack.zero_state(1)
    for t in range(T):
        h, state = stack.step(xs[:, t, :], state)
        assert np.array_equal(h, batch[:, t, :])


def test_padded_steps_carry_state():
    stack = LSTMStack(3, 4, 2, rng(8), np.float64)
    xs = rng(9).normal(size=(1, 6, 3))
    mask = np.array([[1, 1, 1, 0, 0, 0]], bool)
    _, final_masked, _ = stack.forward(xs, mask)
    _, final_short, _ = stack.forward(xs[:, :3], None)
    assert final_masked == final_short


def test_initial_state_shape_checked():
    stack = LSTMStack(3, 4, 2, rng(), np.float64)
    with pytest.raises(ValueError):
        stack.forward(np.zeros((2, 3, 3)), initial=RecurrentState.zeros(2, 1, 4, np.float64))


def test_bidirectional_tied_weights_palindrome_symmetry():
    fwd = LSTMStack(2, 3, 1, rng(10), np.float64)
    bwd = LSTMStack(2, 3, 1, rng(11), np.float64)
    for a, b in zip(fwd.parameters(), bwd.parameters()):
        b.value[...] = a.value
    seq = rng(12).normal(size=(3, 2))
    xs = np.concatenate([seq, seq[::-1]])[None]
    out = lstm_sequence_forward(xs, (fwd, bwd), direction="bidirectional")
    f, b = out[0, :, :3], out[0, :, 3:]
    assert np.allclose(f, b[::-1])


def test_bidirectional_respects_lengths():
    fwd = LSTMStack(2, 3, 1, rng(13), np.float64)
    bwd = LSTMStack(2, 3, 1, rng(14), np.float64)
    xs = rng(15).normal(size=(1, 5, 2))
    mask = np.array([[1, 1, 1, 0, 0]], bool)
    padded = lstm_sequence_forward(xs, (fwd, bwd), direction="bidirectional", mask=mask)
    short = lstm_sequence_forward(xs[:, :3], (fwd, bwd), direction="bidirectional")
    assert np.allclose(padded[:, :3], short)


def test_state_equality_and_copy():
    s = RecurrentState.zeros(2, 1, 3)
    t = s.copy()
    assert s == t
    t.layers[0][0][0, 0] = 1.0
    assert s != t
