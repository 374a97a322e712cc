"""Hot numeric kernels: CSR sparse-dense products and row scatter-add.

Each kernel has a numba implementation and a pure-numpy one.  The numba path
is used when numba imports and ``DPVP_KERNELS`` is not set to ``numpy``.
Both paths reduce in a fixed order, so results are deterministic run to run.
"""
import os

import numpy as np

BACKEND_ENV = "DPVP_KERNELS"

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAS_NUMBA = False


def _want_numba():
    choice = os.environ.get(BACKEND_ENV, "").strip().lower()
    if choice == "numpy":
        return False
    if choice == "numba" and not HAS_NUMBA:
        raise RuntimeError(f"{BACKEND_ENV}=numba but numba is not importable")
    return HAS_NUMBA


def spmm_numpy(indptr, indices, data, x):
    """``out = A @ x`` for CSR ``A`` of shape (n_rows, x.shape[0])."""
    n = len(indptr) - 1
    out = np.zeros((n, x.shape[1]), dtype=x.dtype)
    if len(indices) == 0:
        return out
    contrib = x[indices] * data[:, None].astype(x.dtype, copy=False)
    nonempty = np.flatnonzero(np.diff(indptr))
    out[nonempty] = np.add.reduceat(contrib, indptr[nonempty], axis=0)
    return out


def scatter_add_numpy(out, idx, vals):
    """``out[idx[i]] += vals[i]`` with repeated indices accumulating."""
    np.add.at(out, idx, vals)
    return out


if HAS_NUMBA:

    @numba.njit(cache=True, nogil=True, parallel=True)
    def _spmm_nb(indptr, indices, data, x, out):
        n = len(indptr) - 1
        d = x.shape[1]
        for r in numba.prange(n):
            for j in range(indptr[r], indptr[r + 1]):
                c = indices[j]
                w = data[j]
                for k in range(d):
                    out[r, k] += w * x[c, k]
        return out

    @numba.njit(cache=True, nogil=True)
    def _scatter_nb(out, idx, vals):
        d = vals.shape[1]
        for i in range(len(idx)):
            r = idx[i]
            for k in range(d):
                out[r, k] += vals[i, k]
        return out

    def spmm_numba(indptr, indices, data, x):
        x = np.ascontiguousarray(x)
        out = np.zeros((len(indptr) - 1, x.shape[1]), dtype=x.dtype)
        return _spmm_nb(indptr, indices, data.astype(x.dtype, copy=False), x, out)

    def scatter_add_numba(out, idx, vals):
        flat_out = out.reshape(out.shape[0], -1)
        flat_vals = np.ascontiguousarray(vals.reshape(len(idx), -1), dtype=out.dtype)
        _scatter_nb(flat_out, np.ascontiguousarray(idx, dtype=np.int64), flat_vals)
        return out


    @numba.njit(cache=True, nogil=True, parallel=True)
    def _food_gate_fwd_nb(R, unode, cand, mask, w, X):
        B, N = cand.shape
        G, d = R.shape[1], R.shape[2]
        for b in numba.prange(B):
            u = unode[b]
            for g in range(G):
                mx = -np.inf
                for n in range(N):
                    if mask[b, n]:
                        c = cand[b, n]
                        acc = 0.0
                        for k in range(d):
                            acc += R[c, g, k] * R[u, g, k]
                        w[b, g, n] = acc
                        if acc > mx:
                            mx = acc
                tot = 0.0
                for n in range(N):
                    if mask[b, n]:
                        e = np.exp(w[b, g, n] - mx)
                        w[b, g, n] = e
                        tot += e
                    else:
                        w[b, g, n] = 0.0
                for n in range(N):
                    if mask[b, n]:
                        wn = w[b, g, n] / tot
                        w[b, g, n] = wn
                        c = cand[b, n]
                        for k in range(d):
                            X[b, g, k] += wn * R[c, g, k]
        return w, X

    @numba.njit(cache=True, nogil=True)
    def _food_gate_bwd_nb(R, unode, cand, mask, w, gX, gR):
        B, N = cand.shape
        G, d = R.shape[1], R.shape[2]
        gw = np.empty(N, dtype=R.dtype)
        for b in range(B):
            u = unode[b]
            for g in range(G):
                s = 0.0
                for n in range(N):
                    acc = 0.0
                    if mask[b, n]:
                        c = cand[b, n]
                        for k in range(d):
                            acc += gX[b, g, k] * R[c, g, k]
                    gw[n] = acc
                    s += w[b, g, n] * acc
                for n in range(N):
                    if not mask[b, n]:
                        continue
                    c = cand[b, n]
                    wn = w[b, g, n]
                    gl = wn * (gw[n] - s)
                    for k in range(d):
                        gR[c, g, k] += wn * gX[b, g, k] + gl * R[u, g, k]
                        gR[u, g, k] += gl * R[c, g, k]
        return gR


def food_gate_forward_numpy(R, unode, cand, mask):
    from .gating import food_gate_batch
    q = R[unode]                          # (B, G, d)
    C = R[cand].transpose(0, 2, 1, 3)     # (B, G, N, d)
    m = np.broadcast_to(mask[:, None, :], C.shape[:3])
    return food_gate_batch(q, C, m)


def food_gate_backward_numpy(R, unode, cand, mask, w, gX, gR):
    from .gating import food_gate_batch_backward
    q = R[unode]
    C = R[cand].transpose(0, 2, 1, 3)
    gq, gC = food_gate_batch_backward(gX, q, C, w)
    scatter_add_numpy(gR, unode, gq)
    scatter_add_numpy(gR, cand.reshape(-1), gC.transpose(0, 2, 1, 3).reshape((-1,) + gR.shape[1:]))
    return gR


def food_gate_forward(R, unode, cand, mask):
    """Gather-and-gate for a batch: ``R`` is (n_nodes, G, d) pooled reps.

    Returns weights (B, G, N) and set representations (B, G, d).
    """
    if _want_numba():
        B, N = cand.shape
        w = np.empty((B, R.shape[1], N), dtype=R.dtype)
        X = np.zeros((B, R.shape[1], R.shape[2]), dtype=R.dtype)
        return _food_gate_fwd_nb(np.ascontiguousarray(R), unode, cand, mask, w, X)
    return food_gate_forward_numpy(R, unode, cand, mask)


def food_gate_backward(R, unode, cand, mask, w, gX, gR):
    """Accumulate the gate's gradient into ``gR`` (same layout as ``R``)."""
    if _want_numba():
        return _food_gate_bwd_nb(np.ascontiguousarray(R), unode, cand, mask, w,
                                 np.ascontiguousarray(gX, dtype=R.dtype), gR)
    return food_gate_backward_numpy(R, unode, cand, mask, w, gX, gR)


def get_backend():
    return "numba" if _want_numba() else "numpy"


def spmm(indptr, indices, data, x):
    if _want_numba():
        return spmm_numba(indptr, indices, data, x)
    return spmm_numpy(indptr, indices, data, x)


def scatter_add(out, idx, vals):
    """In-place row scatter-add into a C-contiguous ``out``."""
    idx = np.asarray(idx).reshape(-1)
    vals = np.asarray(vals).reshape((len(idx),) + out.shape[1:])
    if _want_numba() and out.flags.c_contiguous:
        return scatter_add_numba(out, idx, vals)
    return scatter_add_numpy(out, idx, vals)
