import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dpvp.errors import ConfigError, UnscorableError
from dpvp.gating import (GATE_MODES, food_gate, food_gate_batch, softmax, time_gate,
                         time_gate_batch)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def test_food_gate_singleton():
    w, x = food_gate([1.0, 2.0], [[3.0, -1.0]])
    assert w.tolist() == [1.0]
    assert x.tolist() == [3.0, -1.0]


def test_food_gate_ln2():
    u = np.array([1.0, 0.0])
    w, _ = food_gate(u, [[math.log(2), 5.0], [0.0, -3.0]])
    np.testing.assert_allclose(w, [2 / 3, 1 / 3], rtol=0, atol=1e-15)


def test_food_gate_identical_candidates():
    c = [0.3, -0.2, 1.0]
    w, x = food_gate([1.0, 1.0, 1.0], [c, c, c, c])
    np.testing.assert_allclose(w, 0.25)
    np.testing.assert_allclose(x, c)


def test_food_gate_empty():
    with pytest.raises(UnscorableError, match="store has no candidate foods"):
        food_gate([1.0, 0.0], np.zeros((0, 2)))


def test_time_gate_uniform():
    per = np.random.default_rng(0).normal(size=(4, 3))
    w, x = time_gate(per, np.zeros(3), np.zeros((4, 3)), 2)
    np.testing.assert_allclose(w, 0.25)
    np.testing.assert_allclose(x, per.mean(axis=0))


def test_time_gate_hard_onehot():
    per = np.arange(12.0).reshape(4, 3)
    w, x = time_gate(per, np.ones(3), np.ones((4, 3)), 1, mode="hard_onehot")
    assert w.tolist() == [0, 1, 0, 0]
    assert x.tolist() == per[1].tolist()


def test_time_gate_ln3():
    # scores h_k . (full + e_target) = (ln 3, 0)
    per = np.array([[math.log(3)], [0.0]])
    w, _ = time_gate(per, np.array([1.0]), np.zeros((2, 1)), 0)
    np.testing.assert_allclose(w, [0.75, 0.25], atol=1e-15)


def test_unknown_mode():
    with pytest.raises(ConfigError):
        time_gate(np.ones((2, 2)), np.ones(2), np.ones((2, 2)), 0, mode="soft")


def test_literal_is_target_independent_and_conditioned_is_not():
    per = np.array([[1.0, 0.0], [0.0, 1.0]])
    full = np.zeros(2)
    E = np.array([[2.0, 0.0], [0.0, 2.0]])
    w0, _ = time_gate(per, full, E, 0, "literal")
    w1, _ = time_gate(per, full, E, 1, "literal")
    assert np.array_equal(w0, w1)
    c0, _ = time_gate(per, full, E, 0, "target_conditioned")
    c1, _ = time_gate(per, full, E, 1, "target_conditioned")
    assert c0[0] > c0[1] and c1[1] > c1[0]


def test_softmax_stable_for_large_logits():
    w = softmax(np.array([1000.0, 1000.0, -1000.0]))
    np.testing.assert_allclose(w, [0.5, 0.5, 0.0])
    assert np.isfinite(w).all()


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (5, 6, 3), elements=finite), arrays(np.float64, (5, 3), elements=finite),
       arrays(np.bool_, (5, 6)))
def test_food_gate_batch_sums_to_one(C, q, mask):
    mask[:, 0] = True
    w, X = food_gate_batch(q, C, mask)
    assert np.all(np.abs(w.sum(axis=-1) - 1.0) <= 1e-12)
    assert np.all(w[~mask] == 0)
    for b in range(5):
        wr, xr = food_gate(q[b], C[b][mask[b]])
        np.testing.assert_allclose(w[b][mask[b]], wr, atol=1e-12)
        np.testing.assert_allclose(X[b], xr, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (4, 4, 3), elements=finite), arrays(np.float64, (4, 3), elements=finite),
       arrays(np.float64, (4, 3), elements=finite), st.lists(st.integers(0, 3), min_size=4, max_size=4),
       st.sampled_from(GATE_MODES))
def test_time_gate_batch_normalised(per, full, E, target, mode):
    target = np.asarray(target)
    w, fused = time_gate_batch(per, full, E, target, mode)
    assert np.all(np.abs(w.sum(axis=1) - 1.0) <= 1e-12)
    if mode == "hard_onehot":
        assert np.array_equal(w, np.eye(4)[target])
    for b in range(4):
        wr, fr = time_gate(per[b], full[b], E, target[b], mode)
        np.testing.assert_allclose(w[b], wr, atol=1e-12)
        np.testing.assert_allclose(fused[b], fr, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 3), elements=finite), arrays(np.float64, (3,), elements=finite),
       arrays(np.float64, (4, 3), elements=finite))
def test_literal_ignores_target(per, full, E):
    ws = [time_gate(per, full, E, m, "literal")[0] for m in range(4)]
    for w in ws[1:]:
        assert np.array_equal(w, ws[0])
