"""End-to-end acceptance checks, one test per criterion.

Each test records a ``criterion N: PASS|FAIL`` line (echoed in the terminal
summary) before asserting.  Criteria 6-8 train the default-size model and
take several minutes each; deselect them with ``-m "not slow"``.
"""
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from dpvp.checkpoint import load_checkpoint
from dpvp.cli import main
from dpvp.data import PERIOD_LABELS, SplitSpec, split_by_day
from dpvp.evaluator import Evaluator, metrics_from_scores
from dpvp.gating import GATE_MODES, food_gate_batch, time_gate, time_gate_batch
from dpvp.gradcheck import run_all
from dpvp.graph import EdgeList, TypedMultigraph, build_graphs
from dpvp.model import VARIANTS, DPVPModel, ModelConfig
from dpvp.propagation import Propagator
from dpvp.synth import PERIODIC_P, SynthSpec, generate
from dpvp.trainer import TrainConfig, train

from oracles import brute_metrics, check_invariants, dense_layers, random_dataset

# Desk-scale data gives ~45 optimiser steps per epoch; at the default lr 1e-4
# the period signal is still faint after 20 epochs, so these runs use 1e-3.
ACCEPT_LR = 1e-3
GAP_EPOCHS = 10


# -- 1. propagation oracle ------------------------------------------------------

def _random_multigraph(rng):
    n = int(rng.integers(3, 51))
    cut = np.sort(rng.choice(np.arange(1, n), size=2, replace=False))
    nu, ns, nf = int(cut[0]), int(cut[1] - cut[0]), int(n - cut[1])
    eds = {}
    for r, (a, b) in {"US": (nu, ns), "UO": (nu, nf), "SO": (ns, nf)}.items():
        k = int(rng.integers(0, 2 * n))
        eds[r] = EdgeList(rng.integers(0, a, k), rng.integers(0, b, k), rng.integers(0, 4, k),
                          rng.integers(1, 6, k))
    return TypedMultigraph(nu, ns, nf, 4, eds)


def test_c1_propagation_oracle(acceptance):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    zero_mismatch = 0
    for _ in range(200):
        g = _random_multigraph(rng)
        L = int(rng.integers(0, 4))
        # positive inputs keep every entry free of cancellation, so a
        # per-entry relative error is meaningful
        H0 = rng.uniform(0.5, 1.5, size=(g.n_nodes, 6))
        prop = Propagator(g)
        got = prop.layers(H0, L)
        want = dense_layers(g, H0, L)
        for a, b in zip(got, want):
            nz = b != 0
            zero_mismatch += int(np.count_nonzero(a[~nz]))
            if nz.any():
                worst = max(worst, float(np.max(np.abs(a[nz] - b[nz]) / np.abs(b[nz]))))
        pooled = prop.pooled(H0, L)
        ref = sum(w / (l + 1) for l, w in enumerate(want))
        worst = max(worst, float(np.max(np.abs(pooled - ref) / np.abs(ref))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and zero_mismatch == 0 and dt < 30
    acceptance(1, ok, f"max rel err {worst:.2e} (<= 1e-10), zero mismatches {zero_mismatch}, "
                      f"{dt:.1f}s (< 30s)")
    assert ok


# -- 2. gradient exactness ------------------------------------------------------

def test_c2_gradient_exactness(acceptance):
    t0 = time.perf_counter()
    res = run_all(variants=tuple(VARIANTS), modes=GATE_MODES, step=1e-4, tol=1e-4)
    dt = time.perf_counter() - t0
    groups = [g for gs in res.values() for g in gs]
    worst = max(g.max_rel_err for g in groups)
    n_bad = sum(g.n_fail for g in groups)
    n_par = sum(g.size for g in groups)
    ok = n_bad == 0 and len(res) == len(VARIANTS) * len(GATE_MODES) and dt < 120
    acceptance(2, ok, f"{len(res)} variant x mode combos, {n_par} parameters, {n_bad} failing, "
                      f"max rel err {worst:.2e} (<= 1e-4), {dt:.1f}s (< 120s)")
    assert ok


# -- 3. graph invariants --------------------------------------------------------

def test_c3_graph_invariants(acceptance):
    t0 = time.perf_counter()
    failures = 0
    for seed in range(1000):
        try:
            check_invariants(*random_dataset(seed))
        except AssertionError:
            failures += 1
    dt = time.perf_counter() - t0
    ok = failures == 0 and dt < 60
    acceptance(3, ok, f"1000 datasets, {failures} violations, {dt:.1f}s (< 60s)")
    assert ok


# -- 4. gate normalisation ------------------------------------------------------

def test_c4_gate_normalisation(acceptance):
    rng = np.random.default_rng(4)
    worst_food = worst_time = 0.0
    onehot_ok = literal_ok = True
    for _ in range(200):
        B, N, M, d = 16, int(rng.integers(1, 11)), 4, 8
        scale = float(rng.choice([0.1, 1.0, 10.0]))
        q = rng.normal(0, scale, (B, d))
        C = rng.normal(0, scale, (B, N, d))
        mask = rng.random((B, N)) < 0.7
        mask[:, 0] = True
        w, _ = food_gate_batch(q, C, mask)
        worst_food = max(worst_food, float(np.max(np.abs(w.sum(-1) - 1))))
        per = rng.normal(0, scale, (B, M, d))
        full = rng.normal(0, scale, (B, d))
        E = rng.normal(0, scale, (M, d))
        tgt = rng.integers(0, M, B)
        for mode in ("target_conditioned", "literal"):
            tw, _ = time_gate_batch(per, full, E, tgt, mode)
            worst_time = max(worst_time, float(np.max(np.abs(tw.sum(-1) - 1))))
        hw, _ = time_gate_batch(per, full, E, tgt, "hard_onehot")
        onehot_ok &= bool(np.array_equal(hw, np.eye(M)[tgt]))
        lw = [time_gate_batch(per, full, E, np.full(B, m), "literal")[0] for m in range(M)]
        literal_ok &= all(np.array_equal(lw[0], x) for x in lw[1:])
    # counterexample: two periods, each aligned with its own period embedding
    per = np.array([[1.0, 0.0], [0.0, 1.0]])
    E = 2.0 * np.eye(2)
    c0, _ = time_gate(per, np.zeros(2), E, 0, "target_conditioned")
    c1, _ = time_gate(per, np.zeros(2), E, 1, "target_conditioned")
    sensitive = not np.allclose(c0, c1)
    ok = worst_food <= 1e-12 and worst_time <= 1e-12 and onehot_ok and literal_ok and sensitive
    acceptance(4, ok, f"food-gate sum err {worst_food:.1e}, time-gate sum err {worst_time:.1e} "
                      f"(<= 1e-12), one-hot exact {onehot_ok}, literal target-free {literal_ok}, "
                      f"conditioned target-sensitive {sensitive}")
    assert ok


# -- 5. metric oracle -----------------------------------------------------------

class _Constant:
    def __init__(self, model):
        self._m = model

    def __getattr__(self, k):
        return getattr(self._m, k)

    def score_batch(self, params, reps, users, stores, targets):
        return np.full(len(users), 0.25)


def test_c5_metric_oracle(acceptance):
    rng = np.random.default_rng(5)
    n, k = 10_000, 99
    # mix of continuous and heavily tied score vectors
    pos = np.where(rng.random(n) < 0.5, rng.normal(size=n), rng.integers(0, 8, n))
    negs = np.where(rng.random((n, 1)) < 0.5, rng.normal(size=(n, k)), rng.integers(0, 8, (n, k)))
    ranks, per = metrics_from_scores(pos, negs, np.full(n, k), 10)
    mismatches = 0
    for i in range(n):
        r, h, nd, mr, auc = brute_metrics(pos[i], negs[i].tolist(), 10)
        got = (ranks[i], per["hit"][i], per["ndcg"][i], per["mrr"][i], per["auc"][i])
        mismatches += got != (r, h, nd, mr, auc)
    r = generate(SynthSpec(n_users=300, n_stores=100, n_foods=90, n_records=6000, seed=5))
    tr, va, te = split_by_day(r.dataset, SplitSpec())
    m = DPVPModel(ModelConfig(embedding_dim=4, mlp_hidden=(4,)), build_graphs(tr))
    ev = Evaluator(m, m.init_params(0), [tr, va, te])
    ev.model = _Constant(m)
    rep = ev.evaluate(te)
    hit, auc = rep.overall["hit"], rep.overall["auc"]
    ok = mismatches == 0 and hit == 0.0 and auc == 0.5
    acceptance(5, ok, f"{n} vectors, {mismatches} mismatches vs brute force; constant scorer "
                      f"Hit@10={hit} AUC={auc} over {rep.evaluated} instances")
    assert ok


# -- 6 + 7. training sanity and period-pattern recovery -----------------------------

@pytest.fixture(scope="module")
def default_training():
    r = generate(SynthSpec())
    tr, va, te = split_by_day(r.dataset, SplitSpec(6, 1, 1))
    t0 = time.perf_counter()
    model = DPVPModel(ModelConfig(variant="full"), build_graphs(tr))
    res = train(model, tr, va, TrainConfig(lr=ACCEPT_LR, epochs=20))
    dt = time.perf_counter() - t0
    return r, model, res, (tr, va, te), dt


@pytest.mark.slow
def test_c6_training_sanity(acceptance, default_training):
    r, model, res, _, dt = default_training
    h = res.history
    probe = [x["probe_loss"] for x in h[:4]]
    ups = sum(b > a for a, b in zip(probe, probe[1:]))
    best_hit = max(x["val_hit"] for x in h[1:])
    first = next((x["epoch"] for x in h[1:] if x["val_hit"] >= 0.30), None)
    ok = ups <= 1 and best_hit >= 0.30 and dt <= 600
    acceptance(6, ok, f"train BPR (fixed probe triplets) epochs 0-3 {[round(p, 4) for p in probe]}, "
                      f"{ups} increases (<= 1); best val Hit@10 {best_hit:.4f} (>= 0.30, first at "
                      f"epoch {first}); {dt:.0f}s (<= 600s)")
    assert ok


@pytest.mark.slow
def test_c7_period_pattern_recovery(acceptance, default_training):
    r, model, res, (tr, va, te), _ = default_training
    ev = Evaluator(model, res.params, [tr, va, te])
    cmap = {f: r.category_names[c] for f, c in r.food_category.items()}
    hm = ev.heatmap(te, cmap)
    rhos = {}
    for c, name in enumerate(r.category_names):
        if np.ptp(r.P[c]) == 0:
            continue  # a flat planted row has no ranking to recover
        row = hm.values[hm.categories.index(name)]
        rhos[name] = float(spearmanr(row, r.P[c]).statistic)
    mean_rho = float(np.mean(list(rhos.values())))
    morning = int(np.argmax(r.P[:, 0]))
    mrow = hm.values[hm.categories.index(r.category_names[morning])]
    peak = PERIOD_LABELS[int(np.nanargmax(mrow))]
    ok = mean_rho >= 0.7 and peak == "Morning"
    acceptance(7, ok, f"mean Spearman {mean_rho:.3f} (>= 0.7) over {sorted(rhos)} "
                      f"{[round(rhos[k], 2) for k in sorted(rhos)]}; "
                      f"{r.category_names[morning]} row peaks in {peak}")
    assert ok


# -- 8. period-modeling gap -----------------------------------------------------

def _test_hit(variant, seed):
    r = generate(SynthSpec(P=PERIODIC_P, seed=seed))
    tr, va, te = split_by_day(r.dataset, SplitSpec())
    model = DPVPModel(ModelConfig(variant=variant), build_graphs(tr))
    res = train(model, tr, va, TrainConfig(lr=ACCEPT_LR, epochs=GAP_EPOCHS, seed=seed))
    return Evaluator(model, res.params, [tr, va, te]).evaluate(te, seed=seed).overall["hit"]


@pytest.mark.slow
def test_c8_period_modeling_gap(acceptance):
    gaps = []
    for seed in (0, 1, 2):
        full, wo = _test_hit("full", seed), _test_hit("wo_time", seed)
        gaps.append((full, wo))
    diffs = [100 * (a - b) for a, b in gaps]
    mean = float(np.mean(diffs))
    ok = mean >= 2.0 and all(d > 0 for d in diffs)
    acceptance(8, ok, f"test Hit@10 full vs wo_time per seed "
                      f"{[(round(a, 4), round(b, 4)) for a, b in gaps]}; gap "
                      f"{[round(d, 2) for d in diffs]} points, mean {mean:.2f} (>= 2.0)")
    assert ok


# -- 9. determinism and persistence ---------------------------------------------

def test_c9_determinism_and_persistence(acceptance, tmp_path):
    data = tmp_path / "data"
    small = ["--synth_users", "300", "--synth_stores", "30", "--synth_foods", "90",
             "--synth_records", "6000"]
    assert main(["synth", "--out_dir", str(data)] + small) == 0
    base = ["--data", str(data / "interactions.csv"), "--embedding_dim", "16",
            "--mlp_hidden", "32,16", "--epochs", "2", "--batch_size", "256", "--lr", "1e-3",
            "--category_map", str(data / "food_categories.csv")]
    for run in ("a", "b"):
        out = ["--out_dir", str(tmp_path / run)]
        assert main(["train"] + base + out) == 0
        assert main(["eval"] + base + out) == 0
    same = {f: (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
            for f in ("report.csv", "heatmap.csv", "checkpoint.dpvp")}
    # round trip: reload and compare with the in-memory result of the same training
    from dpvp.data import read_interaction_log
    cfg, params, _ = load_checkpoint(tmp_path / "a" / "checkpoint.dpvp")
    tr, va, te = split_by_day(read_interaction_log(str(data / "interactions.csv")), SplitSpec())
    model = DPVPModel(cfg, build_graphs(tr, cfg.n_prime))
    res = train(model, tr, va, TrainConfig(lr=1e-3, epochs=2, batch_size=256))
    bit_exact = all(params[k].tobytes() == res.params[k].tobytes() for k in params)
    rep_mem = Evaluator(model, res.params, [tr, va, te]).evaluate(te).to_csv()
    rep_disk = Evaluator(model, params, [tr, va, te]).evaluate(te).to_csv()
    same_eval = rep_mem == rep_disk == (tmp_path / "a" / "report.csv").read_text()
    ok = all(same.values()) and bit_exact and same_eval
    acceptance(9, ok, f"identical bytes across runs {same}; checkpoint params bit-exact "
                      f"{bit_exact}; reloaded evaluation identical {same_eval}")
    assert ok
