import math

import numpy as np
import pytest

from dpvp.data import SplitSpec, split_by_day
from dpvp.errors import ConfigError
from dpvp.graph import build_graphs
from dpvp.model import DPVPModel, ModelConfig, bpr_terms
from dpvp.synth import SynthSpec, generate
from dpvp.trainer import (NegativeSampler, OptimizerState, TrainConfig, TripletBatch, adamw_step,
                          bpr_loss, interaction_matrix, sample_negative, train)


def test_bpr_values():
    l, _ = bpr_terms(np.array([0.0, math.log(3), 800.0, -800.0]))
    np.testing.assert_allclose(l[:2], [math.log(2), -math.log(0.75)], rtol=1e-15)
    assert abs(l[1] - 0.287682) < 1e-6
    assert l[2] == 0.0
    assert np.isfinite(l[3]) and abs(l[3] - 800.0) < 1e-9


def test_bpr_derivative():
    x = np.linspace(-4, 4, 9)
    _, d = bpr_terms(x)
    h = 1e-6
    num = (bpr_terms(x + h)[0] - bpr_terms(x - h)[0]) / (2 * h)
    np.testing.assert_allclose(d, num, atol=1e-8)


def test_bpr_weights():
    l, d = bpr_terms(np.zeros(2), weights=np.array([2.0, 0.0]))
    np.testing.assert_allclose(l, [2 * math.log(2), 0.0])
    np.testing.assert_allclose(d, [-1.0, 0.0])


def test_adamw_fixed_point():
    p = {"w": np.array([1.0, -2.0])}
    adamw_step(p, {"w": np.zeros(2)}, OptimizerState(), TrainConfig(weight_decay=0.0))
    assert p["w"].tolist() == [1.0, -2.0]


@pytest.mark.parametrize("g", [3.0, -0.02, 1e-3])
def test_adamw_first_step_is_sign(g):
    cfg = TrainConfig(lr=1e-3, weight_decay=0.0)
    p = {"w": np.array([0.5])}
    adamw_step(p, {"w": np.array([g])}, OptimizerState(), cfg)
    step = p["w"][0] - 0.5
    assert abs(step + cfg.lr * math.copysign(1, g)) < cfg.lr * 1e-4


def test_adamw_decoupled_decay():
    cfg = TrainConfig(lr=0.1, weight_decay=0.5)
    p = {"w": np.array([2.0])}
    adamw_step(p, {"w": np.zeros(1)}, OptimizerState(), cfg)
    assert p["w"][0] == 2.0 * (1 - 0.05)
    # masked parameters are not decayed
    p = {"w": np.array([2.0])}
    adamw_step(p, {"w": np.zeros(1)}, OptimizerState(), cfg, decay_mask={"w": False})
    assert p["w"][0] == 2.0


def test_adamw_shape_mismatch():
    with pytest.raises(AssertionError):
        adamw_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, OptimizerState(), TrainConfig())


def test_bad_train_config():
    with pytest.raises(ConfigError):
        TrainConfig(lr=0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def test_forced_negative():
    inter = np.array([[True, True, False, True]])
    s = NegativeSampler(inter, np.ones(4, bool))
    rng = np.random.default_rng(0)
    assert {sample_negative(0, rng, s) for _ in range(50)} == {2}


def test_no_eligible_store():
    s = NegativeSampler(np.array([[True, False]]), np.array([True, False]))
    assert sample_negative(0, np.random.default_rng(0), s) is None


def test_sampler_reproducible():
    inter = np.random.default_rng(1).random((20, 30)) < 0.3
    s = NegativeSampler(inter, np.ones(30, bool))
    users = np.arange(20).repeat(10)
    a, _ = s.sample(users, np.random.default_rng(4))
    b, _ = s.sample(users, np.random.default_rng(4))
    assert np.array_equal(a, b)
    assert not inter[users, a].any()


def test_sampler_uniform_two_stores():
    inter = np.array([[True, False, True, False, True]])
    s = NegativeSampler(inter, np.ones(5, bool))
    n = 10_000
    st, ok = s.sample(np.zeros(n, dtype=np.int64), np.random.default_rng(9))
    assert ok.all() and set(st.tolist()) == {1, 3}
    k = int((st == 1).sum())
    assert abs(k - n / 2) <= 3 * math.sqrt(n * 0.25)


def test_sampler_respects_scorable():
    s = NegativeSampler(np.zeros((1, 4), bool), np.array([True, False, True, False]))
    st, _ = s.sample(np.zeros(500, dtype=np.int64), np.random.default_rng(0))
    assert set(st.tolist()) <= {0, 2}


def test_interaction_matrix_ignores_unseen():
    class D:
        user = np.array([0, 5])
        store = np.array([1, 1])
    m = interaction_matrix([D], 3, 2)
    assert m.sum() == 1 and m[0, 1]


@pytest.fixture(scope="module")
def small():
    r = generate(SynthSpec(n_users=150, n_stores=20, n_foods=60, n_records=3000, seed=3))
    tr, va, te = split_by_day(r.dataset, SplitSpec())
    g = build_graphs(tr)
    m = DPVPModel(ModelConfig(embedding_dim=16, mlp_hidden=(32, 16)), g)
    return m, tr, va


def _strip(hist):
    return [{k: v for k, v in h.items() if k != "seconds"} for h in hist]


def test_two_epochs_reduce_loss(small):
    m, tr, va = small
    res = train(m, tr, va, TrainConfig(lr=1e-3, epochs=2, batch_size=256))
    h = res.history
    assert h[-1]["probe_loss"] < h[0]["probe_loss"]
    assert h[2]["train_loss"] < h[1]["train_loss"]
    assert [x["epoch"] for x in h] == [0, 1, 2]


def test_zero_epochs_is_init(small):
    m, tr, va = small
    res = train(m, tr, va, TrainConfig(epochs=0))
    init = m.init_params(0)
    assert all(np.array_equal(res.params[k], init[k]) for k in init)
    assert res.best_epoch == 0


def test_training_deterministic(small):
    m, tr, va = small
    cfg = TrainConfig(lr=1e-3, epochs=2, batch_size=256, seed=11)
    a = train(m, tr, va, cfg)
    b = train(m, tr, va, cfg)
    assert _strip(a.history) == _strip(b.history)
    assert all(np.array_equal(a.final_params[k], b.final_params[k]) for k in a.final_params)


def test_best_checkpoint_and_patience(small):
    m, tr, va = small
    res = train(m, tr, va, TrainConfig(lr=1e-3, epochs=6, batch_size=256, patience=1))
    hits = [h["val_hit"] for h in res.history]
    assert res.history[res.best_epoch]["val_hit"] == max(hits)
    if len(res.history) - 1 < 6:
        # stopped right after an epoch that did not improve
        assert hits[-1] <= max(hits[:-1])


def test_probe_loss_matches_bpr_loss(small):
    m, tr, va = small
    p = m.init_params(0)
    b = TripletBatch(np.array([0, 1]), np.array([0, 1]), np.array([1, 0]), np.array([0, 2]))
    assert np.isfinite(bpr_loss(b, p, m))
