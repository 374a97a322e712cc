"""Compare the numba kernels with the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--step]

Times the sparse propagation product, the row scatter-add, the fused food
gate (forward + backward) and, with ``--step``, one full training step of the
default model on the default synthetic data.
"""
import argparse
import os
import time
import warnings

import numpy as np
import scipy.sparse as sp

warnings.filterwarnings("ignore", message=".*TBB.*")

from dpvp import kernels  # noqa: E402


def timeit(fn, repeat):
    fn()  # warm-up (and JIT compile)
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cases(rng):
    n, d = 2400, 100
    A = sp.random(n, n, density=0.02, random_state=rng, format="csr")
    A.sort_indices()
    ip, ix = A.indptr.astype(np.int64), A.indices.astype(np.int64)
    x = rng.normal(size=(n, d))
    idx = rng.integers(0, n, 4096)
    vals = rng.normal(size=(4096, 5, d))
    out = np.zeros((n, 5, d))
    R = rng.normal(size=(n, 5, d))
    B, N = 2048, 10
    unode = rng.integers(0, 2000, B)
    cand = rng.integers(2100, n, (B, N))
    mask = np.ones((B, N), bool)
    gX = rng.normal(size=(B, 5, d))

    def gate():
        w, _ = kernels.food_gate_forward(R, unode, cand, mask)
        kernels.food_gate_backward(R, unode, cand, mask, w, gX, np.zeros_like(R))

    return {
        "spmm (2400x2400, 2% dense, d=100)": lambda: kernels.spmm(ip, ix, A.data, x),
        "scatter_add (4096 rows x 500)": lambda: kernels.scatter_add(out, idx, vals),
        "food gate fwd+bwd (B=2048, N'=10)": gate,
    }


def step_case():
    from dpvp.data import SplitSpec, split_by_day
    from dpvp.graph import build_graphs
    from dpvp.model import DPVPModel, ModelConfig, loss_and_grads
    from dpvp.synth import SynthSpec, generate
    from dpvp.trainer import NegativeSampler, interaction_matrix

    tr, _, _ = split_by_day(generate(SynthSpec()).dataset, SplitSpec())
    m = DPVPModel(ModelConfig(), build_graphs(tr))
    p = m.init_params(0)
    rng = np.random.default_rng(0)
    i = rng.choice(len(tr), 1024, replace=False)
    s = NegativeSampler(interaction_matrix([tr], m.n_users, m.n_stores), m.scorable_store)
    neg, _ = s.sample(tr.user[i], rng)
    return lambda: loss_and_grads(m, p, tr.user[i], tr.store[i], neg, tr.period[i])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--step", action="store_true", help="also time one training step")
    args = ap.parse_args()
    if not kernels.HAS_NUMBA:
        print("numba not importable; only the numpy path is available")
    rng = np.random.default_rng(0)
    work = cases(rng)
    if args.step:
        work["training step (default model, batch 1024)"] = step_case()
    print(f"{'case':44s} {'numpy s':>10s} {'numba s':>10s} {'speedup':>8s}")
    for name, fn in work.items():
        os.environ[kernels.BACKEND_ENV] = "numpy"
        t_np = timeit(fn, args.repeat)
        t_nb = float("nan")
        if kernels.HAS_NUMBA:
            os.environ[kernels.BACKEND_ENV] = "numba"
            t_nb = timeit(fn, args.repeat)
        print(f"{name:44s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.2f}x")
    os.environ.pop(kernels.BACKEND_ENV, None)


if __name__ == "__main__":
    main()
