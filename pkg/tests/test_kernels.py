import numpy as np
import pytest
import scipy.sparse as sp

from dpvp import kernels


@pytest.fixture
def numpy_backend(monkeypatch):
    monkeypatch.setenv(kernels.BACKEND_ENV, "numpy")


def rand_csr(rng, n, m, density=0.2):
    A = sp.random(n, m, density=density, random_state=rng, format="csr")
    A.sort_indices()
    return A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data, A


def test_env_flag(monkeypatch):
    monkeypatch.setenv(kernels.BACKEND_ENV, "numpy")
    assert kernels.get_backend() == "numpy"
    monkeypatch.delenv(kernels.BACKEND_ENV)
    assert kernels.get_backend() == ("numba" if kernels.HAS_NUMBA else "numpy")


def test_spmm_numpy_matches_scipy():
    rng = np.random.default_rng(0)
    ip, ix, d, A = rand_csr(rng, 40, 30)
    x = rng.normal(size=(30, 5))
    np.testing.assert_allclose(kernels.spmm_numpy(ip, ix, d, x), A @ x, atol=1e-13)


@pytest.mark.skipif(not kernels.HAS_NUMBA, reason="numba missing")
def test_backends_agree():
    rng = np.random.default_rng(1)
    ip, ix, d, A = rand_csr(rng, 60, 60, 0.1)
    x = rng.normal(size=(60, 7))
    np.testing.assert_allclose(kernels.spmm_numba(ip, ix, d, x), kernels.spmm_numpy(ip, ix, d, x),
                               atol=1e-13)
    out_a = np.zeros((10, 3, 2))
    out_b = np.zeros((10, 3, 2))
    idx = rng.integers(0, 10, 50)
    vals = rng.normal(size=(50, 3, 2))
    kernels.scatter_add_numba(out_a, idx, vals)
    kernels.scatter_add_numpy(out_b, idx, vals)
    np.testing.assert_allclose(out_a, out_b, atol=1e-13)


@pytest.mark.skipif(not kernels.HAS_NUMBA, reason="numba missing")
def test_food_gate_backends_agree(monkeypatch):
    rng = np.random.default_rng(2)
    R = rng.normal(size=(20, 3, 4))
    unode = rng.integers(0, 5, 8)
    cand = rng.integers(10, 20, (8, 4))
    mask = rng.random((8, 4)) < 0.7
    mask[:, 0] = True
    gX = rng.normal(size=(8, 3, 4))
    monkeypatch.delenv(kernels.BACKEND_ENV, raising=False)
    w1, X1 = kernels.food_gate_forward(R, unode, cand, mask)
    g1 = kernels.food_gate_backward(R, unode, cand, mask, w1, gX, np.zeros_like(R))
    monkeypatch.setenv(kernels.BACKEND_ENV, "numpy")
    w2, X2 = kernels.food_gate_forward(R, unode, cand, mask)
    g2 = kernels.food_gate_backward(R, unode, cand, mask, w2, gX, np.zeros_like(R))
    np.testing.assert_allclose(w1, w2, atol=1e-14)
    np.testing.assert_allclose(X1, X2, atol=1e-13)
    np.testing.assert_allclose(g1, g2, atol=1e-12)


def test_scatter_add_repeats(numpy_backend):
    out = np.zeros((3, 2))
    kernels.scatter_add(out, [0, 0, 2], np.ones((3, 2)))
    assert out.tolist() == [[2, 2], [0, 0], [1, 1]]


def test_model_gradients_on_numpy_backend(numpy_backend):
    from dpvp.gradcheck import TINY_TRIPLETS, check_gradients, check_params, tiny_model
    m = tiny_model("full", "literal")
    res = check_gradients(m, check_params(m, 0), TINY_TRIPLETS)
    assert all(r.passed for r in res)


def test_deterministic_repeat():
    rng = np.random.default_rng(3)
    ip, ix, d, _ = rand_csr(rng, 200, 200, 0.05)
    x = rng.normal(size=(200, 16))
    assert kernels.spmm(ip, ix, d, x).tobytes() == kernels.spmm(ip, ix, d, x).tobytes()
