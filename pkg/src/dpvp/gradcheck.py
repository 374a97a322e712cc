"""Central finite-difference verification of the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import build_dataset
from .gating import GATE_MODES
from .graph import build_graphs
from .model import VARIANTS, DPVPModel, ModelConfig, loss_and_grads

# two 12-hour periods
TINY_PERIODS = ((0, 720), (720, 0))
H = 3600


def tiny_dataset():
    """3 users, 2 stores, 3 foods over two periods."""
    rows = [
        ("u0", "s0", [0, 1], 1 * H),
        ("u0", "s0", [1], 13 * H),
        ("u1", "s1", [2], 2 * H),
        ("u1", "s1", [1, 2], 14 * H),
        ("u2", "s0", [0], 15 * H),
        ("u2", "s0", [0, 2], 3 * H),
    ]
    return build_dataset(rows, period_table=TINY_PERIODS)


# (user, positive store, negative store, period)
TINY_TRIPLETS = np.array([[0, 0, 1, 0], [0, 0, 1, 1], [1, 1, 0, 1], [2, 0, 1, 0], [2, 0, 1, 1]])


def tiny_model(variant="full", gate_mode="target_conditioned", d=4, L=1, hidden=(6, 5)):
    ds = tiny_dataset()
    graphs = build_graphs(ds, n_prime=2)
    cfg = ModelConfig(variant=variant, embedding_dim=d, layers=L, n_periods=2, n_prime=2,
                      mlp_hidden=hidden, gate_mode=gate_mode)
    return DPVPModel(cfg, graphs)


def check_params(model: DPVPModel, seed=0, scale=1.0):
    """O(1)-scale parameters with non-zero biases.

    Default initialisation leaves MLP pre-activations near 1e-4, the size of
    the difference step, so ReLU kinks would be crossed.
    """
    rng = np.random.default_rng(seed)
    return {k: rng.normal(0.0, scale, s).astype(model.dtype) for k, s in model.param_shapes().items()}


def relative_error(a, b, floor=1e-6):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@dataclass
class GroupResult:
    name: str
    size: int
    max_rel_err: float
    n_fail: int

    @property
    def passed(self):
        return self.n_fail == 0


def check_gradients(model: DPVPModel, params, triplets, step=1e-4, tol=1e-4, corrupt=None):
    """Compare analytic gradients with central differences, entry by entry.

    ``corrupt`` is a test hook ``(grads) -> grads`` applied to the analytic side.
    """
    u, p, n, m = (triplets[:, i] for i in range(4))
    _, grads = loss_and_grads(model, params, u, p, n, m)
    if corrupt is not None:
        grads = corrupt({k: v.copy() for k, v in grads.items()})
    results = []
    for name, arr in params.items():
        num = np.zeros_like(arr)
        flat = arr.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            lp, _ = loss_and_grads(model, params, u, p, n, m, need_grads=False)
            flat[i] = old - step
            lm, _ = loss_and_grads(model, params, u, p, n, m, need_grads=False)
            flat[i] = old
            nflat[i] = (lp - lm) / (2 * step)
        err = relative_error(grads[name], num)
        results.append(GroupResult(name, arr.size, float(err.max(initial=0.0)), int((err > tol).sum())))
    return results


def run_all(variants=None, modes=None, seed=0, step=1e-4, tol=1e-4, corrupt=None):
    """Gradient check on the tiny instance for every (variant, gate mode)."""
    out = {}
    for v in variants or VARIANTS:
        for mode in modes or GATE_MODES:
            model = tiny_model(v, mode)
            params = check_params(model, seed)
            out[(v, mode)] = check_gradients(model, params, TINY_TRIPLETS, step, tol, corrupt)
    return out
