"""Typed interaction multigraphs and their dual / per-period decompositions.

Node layout shared by every graph and embedding table::

    [0, U)            users
    [U, U + S)        stores
    [U + S, U + S + O) foods
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import Dataset

RELATIONS = ("US", "UO", "SO")
# endpoint node types of each relation
REL_TYPES = {"US": ("user", "store"), "UO": ("user", "food"), "SO": ("store", "food")}


@dataclass(frozen=True)
class EdgeList:
    """Distinct ``(src, dst, period)`` edges with their multiplicity.

    ``src``/``dst`` are indices local to their node type.
    """

    src: np.ndarray
    dst: np.ndarray
    period: np.ndarray
    mult: np.ndarray

    def __len__(self):
        return len(self.src)

    @property
    def total(self) -> int:
        return int(self.mult.sum())

    def select(self, mask) -> "EdgeList":
        return EdgeList(self.src[mask], self.dst[mask], self.period[mask], self.mult[mask])

    @classmethod
    def empty(cls):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z)


@dataclass(frozen=True, eq=False)
class TypedMultigraph:
    n_users: int
    n_stores: int
    n_foods: int
    n_periods: int
    edges: dict  # relation -> EdgeList

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_stores + self.n_foods

    @property
    def relations(self) -> tuple:
        return tuple(r for r in RELATIONS if r in self.edges)

    def offset(self, node_type: str) -> int:
        return {"user": 0, "store": self.n_users, "food": self.n_users + self.n_stores}[node_type]

    def global_endpoints(self, rel: str):
        e = self.edges[rel]
        a, b = REL_TYPES[rel]
        return e.src + self.offset(a), e.dst + self.offset(b)

    def n_edges(self, rel: str | None = None) -> int:
        """Multiplicity-weighted edge count of one relation, or of all."""
        if rel is None:
            return sum(self.n_edges(r) for r in self.relations)
        return self.edges[rel].total if rel in self.edges else 0

    def degree(self, rel: str) -> np.ndarray:
        """Multiplicity-weighted degree of every node w.r.t. ``rel``."""
        deg = np.zeros(self.n_nodes, dtype=np.int64)
        if rel not in self.edges:
            return deg
        ga, gb = self.global_endpoints(rel)
        m = self.edges[rel].mult
        np.add.at(deg, ga, m)
        np.add.at(deg, gb, m)
        return deg

    def restrict(self, relations) -> "TypedMultigraph":
        return TypedMultigraph(self.n_users, self.n_stores, self.n_foods, self.n_periods,
                               {r: self.edges[r] for r in relations if r in self.edges})

    def operator(self, dtype=np.float64):
        """Mean-pooling propagation operator as a CSR matrix.

        Row ``v`` sums, over every relation touching ``v``, the mean of ``v``'s
        neighbours through that relation (multiplicity-weighted).  Nodes with
        no neighbours in a relation receive nothing from it.
        """
        rows, cols, vals = [], [], []
        for rel in self.relations:
            e = self.edges[rel]
            if len(e) == 0:
                continue
            deg = self.degree(rel).astype(np.float64)
            ga, gb = self.global_endpoints(rel)
            m = e.mult.astype(np.float64)
            rows += [ga, gb]
            cols += [gb, ga]
            vals += [m / deg[ga], m / deg[gb]]
        n = self.n_nodes
        if not rows:
            return sp.csr_matrix((n, n), dtype=dtype)
        A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()
        A.sum_duplicates()
        A.sort_indices()
        return A.astype(dtype)

    def dump(self, stream) -> None:
        """Debug edge list ``relation,src,dst,period,multiplicity``."""
        stream.write("relation,src,dst,period,multiplicity\n")
        for rel in self.relations:
            e = self.edges[rel]
            for a, b, p, m in zip(e.src, e.dst, e.period, e.mult):
                stream.write(f"{rel},{a},{b},{p},{m}\n")


def _aggregate(src, dst, period) -> EdgeList:
    if len(src) == 0:
        return EdgeList.empty()
    key = np.stack([src, dst, period], axis=1)
    uniq, counts = np.unique(key, axis=0, return_counts=True)
    return EdgeList(uniq[:, 0].copy(), uniq[:, 1].copy(), uniq[:, 2].copy(), counts.astype(np.int64))


def build_full_period_graph(train: Dataset) -> TypedMultigraph:
    """One US edge per record, one UO and SO edge per food occurrence."""
    if len(train) == 0:
        raise ValueError("cannot build a graph from an empty training split")
    seen = train.seen_mask()
    ds = train if seen.all() else train.subset(np.flatnonzero(seen))
    lens = ds.n_foods_per_record()
    u_rep = np.repeat(ds.user, lens)
    s_rep = np.repeat(ds.store, lens)
    m_rep = np.repeat(ds.period, lens)
    edges = {
        "US": _aggregate(ds.user, ds.store, ds.period),
        "UO": _aggregate(u_rep, ds.food_idx, m_rep),
        "SO": _aggregate(s_rep, ds.food_idx, m_rep),
    }
    return TypedMultigraph(train.n_users, train.n_stores, train.n_foods, train.n_periods, edges)


@dataclass(frozen=True, eq=False)
class DualGraphs:
    food_level: TypedMultigraph
    store_level: TypedMultigraph


def decompose_dual(full: TypedMultigraph) -> DualGraphs:
    return DualGraphs(food_level=full.restrict(("UO", "SO")),
                      store_level=full.restrict(("US", "SO")))


def decompose_by_period(graph: TypedMultigraph, n_periods: int | None = None) -> list:
    """Split edges by their period attribute; node sets are kept intact."""
    M = graph.n_periods if n_periods is None else n_periods
    out = []
    for m in range(M):
        edges = {rel: e.select(e.period == m) for rel, e in graph.edges.items()}
        out.append(TypedMultigraph(graph.n_users, graph.n_stores, graph.n_foods, M, edges))
    return out


@dataclass(frozen=True, eq=False)
class PeriodGraphSet:
    food_level: list
    store_level: list


def decompose_dual_by_period(dual: DualGraphs, n_periods: int) -> PeriodGraphSet:
    return PeriodGraphSet(decompose_by_period(dual.food_level, n_periods),
                          decompose_by_period(dual.store_level, n_periods))


@dataclass(frozen=True, eq=False)
class CandidateFoodTable:
    """Per store: up to ``n_prime`` most clicked foods (dense food indices).

    ``foods`` is padded with 0 where ``mask`` is False.
    """

    foods: np.ndarray   # (S, n_prime) int64
    counts: np.ndarray  # (S, n_prime) int64
    mask: np.ndarray    # (S, n_prime) bool
    n_prime: int

    def __len__(self):
        return len(self.foods)

    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def of(self, store: int) -> list:
        return self.foods[store][self.mask[store]].tolist()

    def has_candidates(self) -> np.ndarray:
        return self.mask[:, 0] if self.n_prime else np.zeros(len(self.foods), dtype=bool)


def compute_candidate_foods(train: Dataset, n_prime: int = 10) -> CandidateFoodTable:
    """Rank each store's foods by total training clicks over all periods.

    Ties go to the smaller raw food id, so the result does not depend on
    record order.
    """
    if n_prime < 1:
        raise ValueError("n_prime must be >= 1")
    S = train.n_stores
    seen = train.seen_mask()
    lens = train.n_foods_per_record()
    rec_ok = np.repeat(seen, lens)
    s_rep = np.repeat(train.store, lens)[rec_ok]
    f_rep = train.food_idx[rec_ok]
    raw = np.asarray([train.foods.raw(i) for i in range(train.n_foods)], dtype=np.int64)

    foods = np.zeros((S, n_prime), dtype=np.int64)
    counts = np.zeros((S, n_prime), dtype=np.int64)
    mask = np.zeros((S, n_prime), dtype=bool)
    if len(s_rep):
        pair, cnt = np.unique(np.stack([s_rep, f_rep], axis=1), axis=0, return_counts=True)
        st, fd = pair[:, 0], pair[:, 1]
        order = np.lexsort((raw[fd], -cnt, st))
        st, fd, cnt = st[order], fd[order], cnt[order]
        starts = np.searchsorted(st, np.arange(S))
        rank = np.arange(len(st)) - starts[st]
        keep = rank < n_prime
        foods[st[keep], rank[keep]] = fd[keep]
        counts[st[keep], rank[keep]] = cnt[keep]
        mask[st[keep], rank[keep]] = True
    return CandidateFoodTable(foods, counts, mask, n_prime)


@dataclass(frozen=True, eq=False)
class GraphSet:
    """Everything built from the training split that the model consumes."""

    full: TypedMultigraph
    dual: DualGraphs
    periods: PeriodGraphSet
    candidates: CandidateFoodTable

    @property
    def n_periods(self) -> int:
        return self.full.n_periods


def build_graphs(train: Dataset, n_prime: int = 10) -> GraphSet:
    full = build_full_period_graph(train)
    dual = decompose_dual(full)
    return GraphSet(full, dual, decompose_dual_by_period(dual, train.n_periods),
                    compute_candidate_foods(train, n_prime))
