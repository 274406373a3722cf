import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamintent.corpus import O_TAG
from streamintent.numkernel import NumericError, Parameter
from streamintent.objective import (
    AdamState,
    FocalConfig,
    MultiTaskWeights,
    adam_step,
    binary_cross_entropy,
    combined_loss,
    cross_entropy,
    focal_loss,
    masked_intent_loss,
    unmasked_intent_loss,
)

LOG17 = math.log(17)


def test_focal_perfect_prediction_is_near_zero():
    loss, _ = focal_loss(np.array([1.0]), np.array([1]))
    assert loss < 1e-12


def test_focal_scalar_oracle():
    loss, _ = focal_loss(np.array([0.5]), np.array([1]), cfg=FocalConfig(1.0, 8.0))
    assert loss == pytest.approx(0.5 ** 8 * math.log(2), rel=1e-12)
    assert loss == pytest.approx(0.0027076, abs=1e-7)


def test_focal_requires_a_valid_step():
    with pytest.raises(ValueError):
        focal_loss(np.array([[0.3, 0.4]]), np.array([[0, 1]]), np.array([[0, 0]]))


@settings(max_examples=200)
@given(seed=st.integers(0, 2**31), T=st.integers(1, 20))
def test_focal_gamma_zero_is_bce(seed, T):
    r = np.random.default_rng(seed)
    p = r.uniform(0, 1, size=(2, T))
    y = r.integers(0, 2, size=(2, T))
    m = r.random((2, T)) < 0.8
    m[:, 0] = True
    loss, _ = focal_loss(p, y, m, FocalConfig(1.0, 0.0))
    assert abs(loss - binary_cross_entropy(p, y, m)) < 1e-9


@settings(max_examples=100)
@given(seed=st.integers(0, 2**31), gamma=st.sampled_from([0.0, 1.0, 2.0, 8.0]))
def test_focal_nonnegative_and_monotone(seed, gamma):
    r = np.random.default_rng(seed)
    y = int(r.integers(0, 2))
    a, b = sorted(r.uniform(0.01, 0.99, size=2))
    near, far = (b, a) if y == 1 else (a, b)
    cfg = FocalConfig(1.0, gamma)
    l_near, _ = focal_loss(np.array([near]), np.array([y]), cfg=cfg)
    l_far, _ = focal_loss(np.array([far]), np.array([y]), cfg=cfg)
    assert 0 <= l_near <= l_far


def _fd_check(fn, x, h=1e-6, tol=1e-5):
    _, g = fn(x)
    num = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        lp, _ = fn(x)
        x[i] = old - h
        lm, _ = fn(x)
        x[i] = old
        num[i] = (lp - lm) / (2 * h)
    assert np.max(np.abs(num - g)) < tol


def test_focal_gradient_matches_finite_differences():
    r = np.random.default_rng(0)
    p = r.uniform(0.05, 0.95, size=(3, 5))
    y = (r.random((3, 5)) < 0.3).astype(int)
    m = np.ones((3, 5), bool)
    m[1, 3:] = False
    _fd_check(lambda q: focal_loss(q, y, m, FocalConfig(1.0, 2.0)), p)


def _dists(r, B, T, K=17):
    z = r.normal(size=(B, T, K))
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


def test_masked_intent_all_zero_mask():
    d = _dists(np.random.default_rng(0), 1, 4)
    loss, g = masked_intent_loss(d, np.full((1, 4), O_TAG), np.zeros((1, 4)))
    assert loss == 0.0 and not g.any()


def test_masked_intent_uniform_oracle():
    d = np.full((3, 17), 1 / 17)
    loss, _ = masked_intent_loss(d, [O_TAG, 5, O_TAG], [0, 1, 0])
    assert loss == pytest.approx(LOG17, rel=1e-12)
    assert loss == pytest.approx(2.8332, abs=1e-4)


def test_masked_intent_rejects_o_at_boundary():
    with pytest.raises(ValueError):
        masked_intent_loss(np.full((2, 17), 1 / 17), [O_TAG, O_TAG], [0, 1])


@settings(max_examples=200)
@given(seed=st.integers(0, 2**31), T=st.integers(2, 15))
def test_masked_intent_invariant_off_boundary(seed, T):
    r = np.random.default_rng(seed)
    d = _dists(r, 1, T)[0]
    b = int(r.integers(T))
    tags = np.full(T, O_TAG)
    tags[b] = int(r.integers(16))
    mask = np.zeros(T)
    mask[b] = 1
    base, _ = masked_intent_loss(d, tags, mask)
    d2 = d.copy()
    others = [t for t in range(T) if t != b]
    d2[others] = _dists(r, 1, len(others))[0]
    assert masked_intent_loss(d2, tags, mask)[0] == base


def test_unmasked_oracles():
    one_hot = np.zeros((2, 17))
    one_hot[0, 0] = one_hot[1, 4] = 1.0
    assert unmasked_intent_loss(one_hot, [O_TAG, 3])[0] == pytest.approx(0.0, abs=1e-12)
    loss, _ = unmasked_intent_loss(np.full((2, 17), 1 / 17), [O_TAG, 3])
    assert loss == pytest.approx(LOG17, rel=1e-12)


def test_unmasked_matches_masked_with_full_mask():
    r = np.random.default_rng(3)
    d = _dists(r, 1, 6)[0]
    tags = r.integers(0, 16, size=6)
    masked, _ = masked_intent_loss(d, tags, np.ones(6))
    unmasked, _ = unmasked_intent_loss(d, tags)
    assert unmasked == pytest.approx(masked / 6, rel=1e-12)


def test_intent_loss_gradients_match_finite_differences():
    r = np.random.default_rng(4)
    d = r.uniform(0.05, 1.0, size=(2, 4, 5))
    tags = np.array([[O_TAG, 2, O_TAG, 1], [0, O_TAG, O_TAG, O_TAG]])
    mask = np.array([[1, 1, 1, 1], [1, 1, 1, 0]], bool)
    ib = np.array([[0, 1, 0, 0], [1, 0, 0, 0]])
    _fd_check(lambda q: unmasked_intent_loss(q, tags, mask), d)
    _fd_check(lambda q: masked_intent_loss(q, tags, ib), d)
    _fd_check(lambda q: cross_entropy(q, np.array([1, 3])), d[:, 0, :].copy())


def test_combined_loss_oracles():
    assert combined_loss(0.4, 0.6, MultiTaskWeights(0.5)) == pytest.approx(0.5)
    assert combined_loss(0.4, 0.6, MultiTaskWeights(1.0)) == 0.4
    assert combined_loss(0.4, 0.6, MultiTaskWeights(0.0)) == 0.6
    with pytest.raises(NumericError):
        combined_loss(float("nan"), 0.1)
    with pytest.raises(ValueError):
        MultiTaskWeights(1.5)


@given(st.floats(0, 1), st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10))
def test_combined_loss_linear(beta, a, b, c):
    w = MultiTaskWeights(beta)
    assert combined_loss(a + c, b, w) - combined_loss(a, b, w) == pytest.approx(beta * c, abs=1e-9)
    assert combined_loss(a, b + c, w) - combined_loss(a, b, w) == pytest.approx((1 - beta) * c, abs=1e-9)


# ----------------------------------------------------------------- Adam


def reference_adam(theta, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return theta


def test_adam_first_step_oracle():
    p = Parameter("theta", np.array([[1.0]]))
    p.grad[...] = 1.0
    adam_step([p], AdamState())
    assert p.value[0, 0] == pytest.approx(1 - 0.001 / (1 + 1e-8), abs=1e-15)
    assert p.grad[0, 0] == 0.0


def test_adam_zero_gradient_leaves_params():
    p = Parameter("theta", np.array([[0.3, -2.0]]))
    adam_step([p], AdamState())
    assert np.array_equal(p.value, [[0.3, -2.0]])


@settings(max_examples=50)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12))
def test_adam_matches_scalar_reference(grads):
    p = Parameter("theta", np.array([[0.7]]))
    state = AdamState()
    for g in grads:
        p.grad[...] = g
        adam_step([p], state)
    assert p.value[0, 0] == pytest.approx(reference_adam(0.7, grads), abs=1e-12)


def test_adam_decreases_convex_quadratic():
    p = Parameter("theta", np.array([[2.0, -1.5]]))
    f = lambda: float((p.value ** 2).sum())
    before = f()
    p.grad[...] = 2 * p.value
    adam_step([p], AdamState(lr=1e-3))
    assert f() < before


def test_adam_rejects_nonfinite_gradient():
    p = Parameter("w", np.zeros((1, 1)))
    p.grad[...] = np.inf
    with pytest.raises(NumericError, match="w"):
        adam_step([p], AdamState())
