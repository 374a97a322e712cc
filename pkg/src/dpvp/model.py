"""Variant layouts, the batched scorer and its exact backward pass.

A variant is a set of embedding *levels* (each a relation subset of the
full-period graph with its own layer-0 table), a list of *streams* fed to the
MLP, and two switches: whether period subgraphs + the time gate are used, and
whether the period embedding is appended to the MLP input.

Pooled representations of a level are stored as ``(n_nodes, G, dim)`` where
graph 0 is the full-period graph and graphs ``1..M`` the period subgraphs.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import ConfigError, UnscorableError
from .gating import check_mode, time_gate_batch, time_gate_batch_backward
from .graph import GraphSet, decompose_by_period
from .propagation import INIT_STD, Propagator, default_alphas

FOOD_LEVEL = ("food", ("UO", "SO"))
STORE_LEVEL = ("store", ("US", "SO"))
GLOBAL_LEVEL = ("global", ("US", "UO", "SO"))


@dataclass(frozen=True)
class VariantSpec:
    tag: str
    levels: tuple          # ((name, relations), ...)
    streams: tuple         # ((level, kind), ...), kind in user/store/foodset
    periods: bool = True
    time_input: bool = False
    dim_mult: int = 1


VARIANTS = {
    "full": VariantSpec(
        "full", (FOOD_LEVEL, STORE_LEVEL),
        (("food", "user"), ("food", "foodset"), ("store", "user"), ("store", "store"))),
    "full_period_global_graph": VariantSpec(
        "full_period_global_graph", (GLOBAL_LEVEL,),
        (("global", "user"), ("global", "foodset"), ("global", "store")), periods=False),
    "user_food": VariantSpec(
        "user_food", (("uo", ("UO",)),), (("uo", "user"), ("uo", "foodset")), dim_mult=2),
    "user_store": VariantSpec(
        "user_store", (("us", ("US",)),), (("us", "user"), ("us", "store")), dim_mult=2),
    "food_level": VariantSpec(
        "food_level", (FOOD_LEVEL,), (("food", "user"), ("food", "foodset")), dim_mult=2),
    "store_level": VariantSpec(
        "store_level", (STORE_LEVEL,), (("store", "user"), ("store", "store")), dim_mult=2),
    "global_level": VariantSpec(
        "global_level", (GLOBAL_LEVEL,),
        (("global", "user"), ("global", "foodset"), ("global", "user"), ("global", "store"))),
    "wo_time": VariantSpec(
        "wo_time", (FOOD_LEVEL, STORE_LEVEL),
        (("food", "user"), ("food", "foodset"), ("store", "user"), ("store", "store")),
        periods=False),
    "time_emb": VariantSpec(
        "time_emb", (FOOD_LEVEL, STORE_LEVEL),
        (("food", "user"), ("food", "foodset"), ("store", "user"), ("store", "store")),
        periods=False, time_input=True),
}


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "full"
    embedding_dim: int = 100
    layers: int = 2
    n_periods: int = 4
    n_prime: int = 10
    mlp_hidden: tuple = (400, 200)
    gate_mode: str = "target_conditioned"
    dtype: str = "float64"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        check_mode(self.gate_mode)
        if self.embedding_dim < 1 or self.layers < 0 or self.n_periods < 1:
            raise ConfigError("embedding_dim >= 1, layers >= 0 and n_periods >= 1 required")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")
        object.__setattr__(self, "mlp_hidden", tuple(int(h) for h in self.mlp_hidden))


@dataclass(frozen=True)
class VariantLayout:
    spec: VariantSpec
    emb_dim: int
    mlp_input: int
    mlp_widths: tuple
    uses_period_table: bool


def make_variant(tag: str, base: ModelConfig | None = None) -> VariantLayout:
    """Resolve a variant tag into embedding width and MLP shape."""
    base = ModelConfig() if base is None else base
    if tag not in VARIANTS:
        raise ConfigError(f"unknown variant {tag!r}")
    spec = VARIANTS[tag]
    dim = base.embedding_dim * spec.dim_mult
    width = len(spec.streams) * dim + (dim if spec.time_input else 0)
    return VariantLayout(spec, dim, width, (width,) + tuple(base.mlp_hidden) + (1,),
                         spec.periods or spec.time_input)


def param_shapes(config: ModelConfig, n_nodes: int) -> dict:
    """Parameter names and shapes in checkpoint order."""
    lay = make_variant(config.variant, config)
    shapes = {f"emb_{name}": (n_nodes, lay.emb_dim) for name, _ in lay.spec.levels}
    if lay.uses_period_table:
        shapes["period"] = (config.n_periods, lay.emb_dim)
    w = lay.mlp_widths
    for i in range(len(w) - 1):
        shapes[f"W{i}"] = (w[i], w[i + 1])
        shapes[f"b{i}"] = (w[i + 1],)
    return shapes


@dataclass
class ForwardCache:
    users: np.ndarray
    stores: np.ndarray
    targets: np.ndarray
    streams: list = field(default_factory=list)
    mlp: list = field(default_factory=list)
    h0: np.ndarray | None = None


class DPVPModel:
    """Scorer bound to the graphs of one training split."""

    def __init__(self, config: ModelConfig, graphs: GraphSet):
        self.config = config
        self.layout = make_variant(config.variant, config)
        self.spec = self.layout.spec
        self.graphs = graphs
        self.dtype = np.dtype(config.dtype)
        full = graphs.full
        self.n_users, self.n_stores, self.n_foods = full.n_users, full.n_stores, full.n_foods
        self.n_nodes = full.n_nodes
        if graphs.candidates.n_prime != config.n_prime:
            raise ConfigError("candidate table size differs from config n_prime")
        self.M = config.n_periods
        if self.spec.periods and full.n_periods != self.M:
            raise ConfigError(f"graphs carry {full.n_periods} periods, config says {self.M}")
        self.alphas = default_alphas(config.layers)
        self.props = {}
        for name, rels in self.spec.levels:
            g = full.restrict(rels)
            gs = [g] + (decompose_by_period(g, self.M) if self.spec.periods else [])
            self.props[name] = [Propagator(x, self.dtype) for x in gs]
        cand = graphs.candidates
        self.cand_nodes = cand.foods + (self.n_users + self.n_stores)
        self.cand_mask = cand.mask
        self.scorable_store = cand.has_candidates()

    # -- parameters ---------------------------------------------------------------

    def param_shapes(self) -> dict:
        return param_shapes(self.config, self.n_nodes)

    def init_params(self, seed: int) -> dict:
        """Gaussian(0, 0.1) for tables and weights, zero biases."""
        rng = np.random.default_rng(seed)
        out = {}
        for name, shape in self.param_shapes().items():
            if name.startswith("b"):
                out[name] = np.zeros(shape, dtype=self.dtype)
            else:
                out[name] = rng.normal(0.0, INIT_STD, shape).astype(self.dtype)
        return out

    # -- propagation --------------------------------------------------------------

    def propagate(self, params: dict) -> dict:
        L = self.config.layers
        reps = {}
        for name, props in self.props.items():
            table = params[f"emb_{name}"]
            reps[name] = np.stack([p.pooled(table, L, self.alphas) for p in props], axis=1)
        return reps

    def propagate_backward(self, g_reps: dict) -> dict:
        L = self.config.layers
        grads = {}
        for name, props in self.props.items():
            g = g_reps[name]
            acc = None
            for k, p in enumerate(props):
                gk = p.pooled_backward(np.ascontiguousarray(g[:, k, :]), L, self.alphas)
                acc = gk if acc is None else acc + gk
            grads[f"emb_{name}"] = acc
        return grads

    # -- scoring ------------------------------------------------------------------

    def check_scorable(self, users, stores):
        users = np.asarray(users)
        stores = np.asarray(stores)
        if (users < 0).any() or (users >= self.n_users).any():
            raise UnscorableError("user unseen in training")
        if (stores < 0).any() or (stores >= self.n_stores).any():
            raise UnscorableError("store unseen in training")
        if not self.scorable_store[stores].all():
            raise UnscorableError("store has no candidate foods")

    def forward(self, params, reps, users, stores, targets, keep=False):
        """Scores for a batch of (user, store, target period) queries."""
        users = np.asarray(users, dtype=np.int64)
        stores = np.asarray(stores, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.int64)
        cache = ForwardCache(users, stores, targets) if keep else None
        mode = self.config.gate_mode
        E = params.get("period")
        u_node = users
        s_node = stores + self.n_users
        cand = self.cand_nodes[stores]
        mask = self.cand_mask[stores]
        fused = []
        for level, kind in self.spec.streams:
            R = reps[level]
            rec = {"level": level, "kind": kind}
            if kind == "user":
                X = R[u_node]
            elif kind == "store":
                X = R[s_node]
            else:
                w, X = kernels.food_gate_forward(R, u_node, cand, mask)
                rec.update(fw=w)
            if self.spec.periods:
                per = X[:, 1:, :]
                full = X[:, 0, :]
                tw, out = time_gate_batch(per, full, E, targets, mode)
                rec.update(per=per, full=full, tw=tw)
            else:
                out = X[:, 0, :]
            fused.append(out)
            if keep:
                cache.streams.append(rec)
        if self.spec.time_input:
            fused.append(E[targets])
        h = np.concatenate(fused, axis=1)
        if keep:
            cache.h0 = h
        n_layers = len(self.layout.mlp_widths) - 1
        for i in range(n_layers):
            z = h @ params[f"W{i}"] + params[f"b{i}"]
            if i < n_layers - 1:
                if keep:
                    cache.mlp.append((h, z))
                h = np.maximum(z, 0.0)
            else:
                if keep:
                    cache.mlp.append((h, z))
                h = z
        return h[:, 0], cache

    def backward(self, params, reps, cache: ForwardCache, g_scores) -> dict:
        """Gradients of ``sum(g_scores * scores)`` w.r.t. every parameter."""
        grads = {k: None for k in params}
        g = np.asarray(g_scores, dtype=self.dtype)[:, None]
        n_layers = len(self.layout.mlp_widths) - 1
        for i in range(n_layers - 1, -1, -1):
            h_in, z = cache.mlp[i]
            if i < n_layers - 1:
                g = g * (z > 0)
            grads[f"W{i}"] = h_in.T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            g = g @ params[f"W{i}"].T
        g_h0 = g
        dim = self.layout.emb_dim
        E = params.get("period")
        g_E = np.zeros_like(E) if E is not None else None
        if self.spec.time_input:
            np.add.at(g_E, cache.targets, g_h0[:, len(self.spec.streams) * dim:])
        mode = self.config.gate_mode
        g_reps = {name: np.zeros((self.n_nodes, len(p), dim), dtype=self.dtype)
                  for name, p in self.props.items()}
        u_node = cache.users
        s_node = cache.stores + self.n_users
        for j, rec in enumerate(cache.streams):
            g_out = g_h0[:, j * dim:(j + 1) * dim]
            if self.spec.periods:
                g_per, g_full, ge = time_gate_batch_backward(
                    g_out, rec["per"], rec["full"], E, cache.targets, mode, rec["tw"])
                g_X = np.zeros((len(g_out), self.M + 1, dim), dtype=self.dtype)
                g_X[:, 1:, :] = g_per
                if g_full is not None:
                    g_X[:, 0, :] = g_full
                if ge is not None:
                    g_E += ge
            else:
                g_X = g_out[:, None, :]
            GR = g_reps[rec["level"]]
            if rec["kind"] == "user":
                kernels.scatter_add(GR, u_node, g_X)
            elif rec["kind"] == "store":
                kernels.scatter_add(GR, s_node, g_X)
            else:
                kernels.food_gate_backward(reps[rec["level"]], u_node, self.cand_nodes[cache.stores],
                                           self.cand_mask[cache.stores], rec["fw"], g_X, GR)
        grads.update(self.propagate_backward(g_reps))
        if g_E is not None:
            grads["period"] = g_E
        return grads

    def score_batch(self, params, reps, users, stores, targets, chunk=8192):
        users = np.asarray(users, dtype=np.int64)
        stores = np.asarray(stores, dtype=np.int64)
        targets = np.broadcast_to(np.asarray(targets, dtype=np.int64), users.shape)
        out = np.empty(len(users), dtype=self.dtype)
        for a in range(0, len(users), chunk):
            b = a + chunk
            out[a:b], _ = self.forward(params, reps, users[a:b], stores[a:b], targets[a:b])
        return out

    def score(self, params, user: int, store: int, target_m: int, reps=None) -> float:
        self.check_scorable([user], [store])
        reps = self.propagate(params) if reps is None else reps
        s, _ = self.forward(params, reps, [user], [store], [target_m])
        return float(s[0])


def bpr_terms(diff, weights=None):
    """Per-triplet ``-ln sigmoid(diff)`` and its derivative w.r.t. ``diff``."""
    diff = np.asarray(diff)
    loss = np.logaddexp(0.0, -diff)
    dloss = -np.exp(-np.logaddexp(0.0, diff))  # -sigmoid(-diff)
    if weights is not None:
        loss = loss * weights
        dloss = dloss * weights
    return loss, dloss


def loss_and_grads(model: DPVPModel, params, users, pos, neg, targets, weights=None,
                   need_grads=True):
    """Mean BPR loss of a triplet batch and (optionally) exact gradients.

    Propagation is recomputed from the current parameters.
    """
    users = np.asarray(users, dtype=np.int64)
    B = len(users)
    if B == 0:
        return 0.0, ({k: np.zeros_like(v) for k, v in params.items()} if need_grads else None)
    reps = model.propagate(params)
    uu = np.concatenate([users, users])
    ss = np.concatenate([np.asarray(pos, dtype=np.int64), np.asarray(neg, dtype=np.int64)])
    mm = np.concatenate([np.asarray(targets, dtype=np.int64)] * 2)
    scores, cache = model.forward(params, reps, uu, ss, mm, keep=need_grads)
    diff = scores[:B] - scores[B:]
    l, dl = bpr_terms(diff, weights)
    loss = float(l.sum() / B)
    if not need_grads:
        return loss, None
    g = dl / B
    grads = model.backward(params, reps, cache, np.concatenate([g, -g]))
    return loss, grads


def with_variant(config: ModelConfig, variant: str) -> ModelConfig:
    return replace(config, variant=variant)
