"""User-aware food-set gate and time-aware period gate.

The single-instance functions (:func:`food_gate`, :func:`time_gate`) are the
reference API.  The ``*_batch`` functions are the vectorised forward/backward
pairs the model uses during training.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, UnscorableError

GATE_MODES = ("target_conditioned", "literal", "hard_onehot")


def softmax(z, axis=-1, mask=None):
    """Softmax with max subtraction; masked-out entries get weight 0."""
    z = np.asarray(z)
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def check_mode(mode: str) -> str:
    if mode not in GATE_MODES:
        raise ConfigError(f"unknown gate mode {mode!r}; expected one of {', '.join(GATE_MODES)}")
    return mode


def food_gate(user_rep, candidate_reps):
    """Softmax over candidates keyed by their dot product with the user.

    Returns ``(weights, set_rep)``.
    """
    C = np.atleast_2d(np.asarray(candidate_reps))
    if C.shape[0] == 0 or np.asarray(candidate_reps).size == 0:
        raise UnscorableError("store has no candidate foods")
    w = softmax(C @ np.asarray(user_rep))
    return w, w @ C


def time_gate_scores(period_reps, full_rep, period_table, target_m, mode):
    P = np.asarray(period_reps)
    E = np.asarray(period_table)
    if mode == "target_conditioned":
        return P @ full_rep + P @ E[target_m]
    if mode == "literal":
        return P @ full_rep + np.einsum("kd,kd->k", P, E)
    raise ConfigError(f"gate mode {mode!r} has no scores")


def time_gate(period_reps, full_rep, period_table, target_m, mode="target_conditioned"):
    """Fuse ``M`` per-period representations into one for ``target_m``.

    ``target_conditioned`` scores period ``k`` by ``h_k . (full + e_target)``;
    ``literal`` uses ``h_k . (full + e_k)``; ``hard_onehot`` returns the
    target period's representation unchanged.
    """
    check_mode(mode)
    P = np.asarray(period_reps)
    if mode == "hard_onehot":
        w = np.zeros(len(P), dtype=P.dtype)
        w[target_m] = 1.0
    else:
        w = softmax(time_gate_scores(P, full_rep, period_table, target_m, mode))
    return w, w @ P


# -- batched forward / backward -------------------------------------------------

def food_gate_batch(q, C, mask):
    """q: (..., d); C: (..., N, d); mask: (..., N).  Returns weights, set reps."""
    logits = np.einsum("...nd,...d->...n", C, q)
    w = softmax(logits, axis=-1, mask=mask)
    X = np.einsum("...n,...nd->...d", w, C)
    return w, X


def food_gate_batch_backward(gX, q, C, w):
    gw = np.einsum("...d,...nd->...n", gX, C)
    gl = w * (gw - np.sum(w * gw, axis=-1, keepdims=True))
    gC = w[..., None] * gX[..., None, :] + gl[..., None] * q[..., None, :]
    gq = np.einsum("...n,...nd->...d", gl, C)
    return gq, gC


def time_gate_batch(per, full, E, target, mode):
    """per: (B, M, d); full: (B, d); E: (M, d); target: (B,) ints.

    Returns ``(weights (B, M), fused (B, d))``.
    """
    if mode == "hard_onehot":
        B, M = per.shape[:2]
        w = np.zeros((B, M), dtype=per.dtype)
        w[np.arange(B), target] = 1.0
    else:
        w = softmax(np.einsum("bmd,bmd->bm", per, _gate_query(full, E, target, mode, per.shape[1])),
                    axis=-1)
    return w, np.einsum("bm,bmd->bd", w, per)


def _gate_query(full, E, target, mode, M):
    if mode == "target_conditioned":
        return (full + E[target])[:, None, :]
    if mode == "literal":
        return full[:, None, :] + E[None, :M, :]
    raise ConfigError(f"unknown gate mode {mode!r}")


def time_gate_batch_backward(g_fused, per, full, E, target, mode, w):
    """Returns ``(g_per, g_full, g_E)``; ``g_full``/``g_E`` are None for hard_onehot."""
    g_per = w[:, :, None] * g_fused[:, None, :]
    if mode == "hard_onehot":
        return g_per, None, None
    gw = np.einsum("bd,bmd->bm", g_fused, per)
    gs = w * (gw - np.sum(w * gw, axis=-1, keepdims=True))
    query = _gate_query(full, E, target, mode, per.shape[1])
    g_per = g_per + gs[:, :, None] * query
    g_q = gs[:, :, None] * per  # (B, M, d)
    g_E = np.zeros_like(E)
    if mode == "target_conditioned":
        gq = g_q.sum(axis=1)
        np.add.at(g_E, target, gq)
        return g_per, gq, g_E
    g_E[:per.shape[1]] += g_q.sum(axis=0)
    return g_per, g_q.sum(axis=1), g_E
