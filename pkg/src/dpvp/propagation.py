"""Layer-0 embedding tables and linear mean-pooling propagation.

Propagation has no transformation or nonlinearity: layer ``l + 1`` is
``P @ layer_l`` where ``P`` is the graph's mean-pooling operator
(:meth:`TypedMultigraph.operator`).  Pooled representations are
``sum_l alpha_l * layer_l`` with ``alpha_l = 1 / (l + 1)`` by default.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError
from .graph import DualGraphs, PeriodGraphSet, TypedMultigraph

INIT_STD = 0.1


@dataclass(frozen=True, eq=False)
class EmbeddingGroup:
    food_level: np.ndarray   # (n_nodes, d)
    store_level: np.ndarray  # (n_nodes, d)
    period: np.ndarray       # (M, d)

    @property
    def dim(self) -> int:
        return self.food_level.shape[1]


def init_embeddings(node_counts, d: int, M: int, seed: int, dtype=np.float64) -> EmbeddingGroup:
    """Gaussian(0, 0.1) tables from a seeded generator.

    ``node_counts`` is ``(n_users, n_stores, n_foods)`` or a total node count.
    """
    if d < 1:
        raise ConfigError("embedding dim must be >= 1")
    n = int(np.sum(node_counts))
    rng = np.random.default_rng(seed)
    return EmbeddingGroup(
        food_level=rng.normal(0.0, INIT_STD, (n, d)).astype(dtype),
        store_level=rng.normal(0.0, INIT_STD, (n, d)).astype(dtype),
        period=rng.normal(0.0, INIT_STD, (M, d)).astype(dtype),
    )


def default_alphas(L: int) -> list:
    return [1.0 / (l + 1) for l in range(L + 1)]


class Propagator:
    """Holds the CSR operator of one graph (and its transpose for backward)."""

    def __init__(self, graph: TypedMultigraph, dtype=np.float64):
        A = graph.operator(dtype)
        At = A.T.tocsr()
        At.sort_indices()
        self.n_nodes = A.shape[0]
        self.nnz = A.nnz
        self._fwd = (A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data)
        self._bwd = (At.indptr.astype(np.int64), At.indices.astype(np.int64), At.data)
        self.matrix = A

    def step(self, x):
        if self.nnz == 0:
            return np.zeros_like(x)
        return kernels.spmm(*self._fwd, x)

    def step_t(self, x):
        if self.nnz == 0:
            return np.zeros_like(x)
        return kernels.spmm(*self._bwd, x)

    def layers(self, table, L: int) -> list:
        out = [table]
        for _ in range(L):
            out.append(self.step(out[-1]))
        return out

    def pooled(self, table, L: int, alphas=None):
        alphas = default_alphas(L) if alphas is None else alphas
        return weighted_pool(self.layers(table, L), alphas)

    def pooled_backward(self, grad, L: int, alphas=None):
        """Gradient w.r.t. the layer-0 table given the gradient of the pooled output."""
        alphas = default_alphas(L) if alphas is None else alphas
        g = alphas[L] * grad
        for l in range(L - 1, -1, -1):
            g = alphas[l] * grad + self.step_t(g)
        return g


def weighted_pool(stack, alphas):
    if len(alphas) != len(stack):
        raise ConfigError(f"need {len(stack)} pooling weights, got {len(alphas)}")
    out = alphas[0] * stack[0]
    for a, h in zip(alphas[1:], stack[1:]):
        out = out + a * h
    return out


def _check_relations(graph: TypedMultigraph, allowed, level):
    extra = set(graph.relations) - set(allowed)
    if extra:
        raise ConfigError(f"{level}-level graph carries relation(s) {sorted(extra)}")


def propagate_food_level(graph: TypedMultigraph, group: EmbeddingGroup, L: int) -> list:
    """Layer stack on a food-level (UO + SO) graph."""
    _check_relations(graph, ("UO", "SO"), "food")
    return Propagator(graph, group.food_level.dtype).layers(group.food_level, L)


def propagate_store_level(graph: TypedMultigraph, group: EmbeddingGroup, L: int) -> list:
    """Layer stack on a store-level (US + SO) graph."""
    _check_relations(graph, ("US", "SO"), "store")
    return Propagator(graph, group.store_level.dtype).layers(group.store_level, L)


@dataclass(frozen=True, eq=False)
class RepresentationBundle:
    """Pooled representations.  ``*_periods`` have shape (M, n_nodes, d)."""

    food_full: np.ndarray
    store_full: np.ndarray
    food_periods: np.ndarray
    store_periods: np.ndarray

    def __len__(self):
        return 2 + len(self.food_periods) + len(self.store_periods)


def propagate_all(dual: DualGraphs, periods: PeriodGraphSet, group: EmbeddingGroup, L: int,
                  alphas=None) -> RepresentationBundle:
    alphas = default_alphas(L) if alphas is None else alphas
    dt = group.food_level.dtype

    def run(graph, table):
        return Propagator(graph, dt).pooled(table, L, alphas)

    d = group.dim
    n = group.food_level.shape[0]
    fp = [run(g, group.food_level) for g in periods.food_level]
    spd = [run(g, group.store_level) for g in periods.store_level]
    return RepresentationBundle(
        food_full=run(dual.food_level, group.food_level),
        store_full=run(dual.store_level, group.store_level),
        food_periods=np.stack(fp) if fp else np.zeros((0, n, d), dtype=dt),
        store_periods=np.stack(spd) if spd else np.zeros((0, n, d), dtype=dt),
    )
