"""Sampled-negative ranking evaluation and the category x period heatmap."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .data import PERIOD_LABELS, Dataset
from .errors import DPVPError
from .model import DPVPModel
from .trainer import interaction_matrix

METRICS = ("hit", "ndcg", "mrr", "auc")


def rank_positive(pos_score: float, neg_scores) -> int:
    """1 + number of negatives scoring at least as high (ties count against)."""
    return 1 + int(np.sum(np.asarray(neg_scores) >= pos_score))


def metrics_from_rank(rank: int, n_negatives: int, K: int = 10, n_ties: int = 0):
    """(hit, ndcg, mrr, auc) for one ranked positive.

    ``n_ties`` of the ``rank - 1`` negatives at or above the positive are
    exact ties; they count 1/2 in AUC.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    hit = 1.0 if rank <= K else 0.0
    ndcg = 1.0 / math.log2(rank + 1) if rank <= K else 0.0
    mrr = 1.0 / rank
    if n_negatives == 0:
        return hit, ndcg, mrr, 1.0
    below = n_negatives - (rank - 1)
    auc = (below + 0.5 * n_ties) / n_negatives
    return hit, ndcg, mrr, auc


def metrics_from_scores(pos, negs, counts, K: int):
    """Vectorised metrics.  ``negs`` is (n, max_neg) padded with -inf beyond ``counts``."""
    ge = (negs >= pos[:, None]).sum(axis=1)
    ties = (negs == pos[:, None]).sum(axis=1)
    rank = 1 + ge
    hit = (rank <= K).astype(np.float64)
    ndcg = np.where(rank <= K, 1.0 / np.log2(rank + 1.0), 0.0)
    mrr = 1.0 / rank
    below = counts - ge
    auc = np.where(counts > 0, (below + 0.5 * ties) / np.maximum(counts, 1), 1.0)
    return rank, {"hit": hit, "ndcg": ndcg, "mrr": mrr, "auc": auc}


def period_labels(M: int):
    return list(PERIOD_LABELS) if M == len(PERIOD_LABELS) else [f"period_{m}" for m in range(M)]


@dataclass
class MetricsReport:
    split: str
    K: int
    rows: dict                       # label -> {metric: value, "count": n}
    evaluated: int
    skipped: int
    shortfall_instances: int = 0
    shortfall_total: int = 0
    ranks: np.ndarray | None = field(default=None, repr=False)

    @property
    def overall(self) -> dict:
        return self.rows["Full"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["split", "period", "metric", "value", "count"])
        for label, row in self.rows.items():
            for m in METRICS:
                w.writerow([self.split, label, m, repr(float(row[m])), row["count"]])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"split": self.split, "K": self.K, "evaluated": self.evaluated,
                "skipped": self.skipped, "shortfall_instances": self.shortfall_instances,
                "shortfall_total": self.shortfall_total}


class Evaluator:
    """Ranks each positive against sampled never-interacted stores.

    ``history`` lists every split whose interactions disqualify a store as a
    negative for that user.
    """

    def __init__(self, model: DPVPModel, params, history, K: int = 10, n_negatives: int = 99,
                 reps=None):
        self.model = model
        self.params = params
        self.K = K
        self.n_negatives = n_negatives
        self.reps = model.propagate(params) if reps is None else reps
        self.interacted = interaction_matrix(history, model.n_users, model.n_stores)
        self.scorable = model.scorable_store

    def instances(self, ds: Dataset):
        ok = (ds.user < self.model.n_users) & (ds.store < self.model.n_stores)
        ok[ok] &= self.scorable[ds.store[ok]]
        return np.flatnonzero(ok)

    def sample_negatives(self, users, rng):
        """Row-wise uniform samples without replacement: (n, n_neg) padded with -1."""
        elig = ~self.interacted[users] & self.scorable[None, :]
        keys = rng.random(elig.shape)
        keys[~elig] = np.inf
        k = min(self.n_negatives, elig.shape[1])
        order = np.argsort(keys, axis=1, kind="stable")[:, :k]
        picked = np.take_along_axis(keys, order, axis=1)
        order[~np.isfinite(picked)] = -1
        return order

    def evaluate(self, ds: Dataset, seed: int = 0, max_instances: int | None = None,
                 split: str = "test") -> MetricsReport:
        if len(ds) == 0:
            raise DPVPError(f"cannot evaluate an empty {split} split")
        idx = self.instances(ds)
        skipped = len(ds) - len(idx)
        rng = np.random.default_rng([seed, 7])
        if max_instances and len(idx) > max_instances:
            idx = np.sort(rng.choice(idx, size=max_instances, replace=False))
        users, stores, periods = ds.user[idx], ds.store[idx], ds.period[idx]
        negs = self.sample_negatives(users, rng) if len(idx) else np.zeros((0, 0), dtype=np.int64)
        counts = (negs >= 0).sum(axis=1)
        cand = np.concatenate([stores[:, None], np.where(negs >= 0, negs, stores[:, None])], axis=1)
        n, c = cand.shape
        scores = self.model.score_batch(self.params, self.reps, np.repeat(users, c),
                                        cand.reshape(-1), np.repeat(periods, c)).reshape(n, c)
        neg_scores = np.where(negs >= 0, scores[:, 1:], -np.inf)
        ranks, per = metrics_from_scores(scores[:, 0], neg_scores, counts, self.K)

        M = self.model.config.n_periods
        rows = {"Full": _agg(per, np.ones(n, dtype=bool))}
        for m, label in enumerate(period_labels(M)):
            rows[label] = _agg(per, periods == m)
        short = counts < self.n_negatives
        return MetricsReport(split, self.K, rows, int(n), int(skipped), int(short.sum()),
                             int((self.n_negatives - counts[short]).sum()), ranks)

    def heatmap(self, ds: Dataset, category_map: dict):
        return category_period_heatmap(ds, self.model, self.params, category_map, reps=self.reps,
                                       instances=self.instances(ds))


def _agg(per, mask):
    n = int(mask.sum())
    out = {m: (float(per[m][mask].mean()) if n else float("nan")) for m in METRICS}
    out["count"] = n
    return out


@dataclass
class Heatmap:
    categories: list
    values: np.ndarray   # (n_categories, M), NaN where no instance
    counts: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        M = self.values.shape[1]
        w.writerow(["category"] + [f"period_{m}" for m in range(M)])
        for c, row in zip(self.categories, self.values):
            w.writerow([c] + ["NA" if np.isnan(x) else repr(float(x)) for x in row])
        return buf.getvalue()


def category_period_heatmap(ds: Dataset, model: DPVPModel, params, category_map: dict,
                            reps=None, instances=None) -> Heatmap:
    """Mean score per (category, target period).

    Every scorable instance is scored at each period; it contributes to each
    category present among its store's candidate foods.
    """
    reps = model.propagate(params) if reps is None else reps
    if instances is None:
        ok = (ds.user < model.n_users) & (ds.store < model.n_stores)
        ok[ok] &= model.scorable_store[ds.store[ok]]
        instances = np.flatnonzero(ok)
    labels = sorted(set(category_map.values()), key=_natural)
    col = {c: i for i, c in enumerate(labels)}
    M = model.config.n_periods
    food_cat = np.full(model.n_foods, -1, dtype=np.int64)
    for f in range(model.n_foods):
        c = category_map.get(ds.foods.raw(f))
        if c is not None:
            food_cat[f] = col[c]
    users, stores = ds.user[instances], ds.store[instances]
    cats = np.zeros((len(instances), len(labels)), dtype=bool)
    cf = food_cat[model.graphs.candidates.foods[stores]]
    cm = model.graphs.candidates.mask[stores] & (cf >= 0)
    rows = np.repeat(np.arange(len(instances))[:, None], cf.shape[1], axis=1)
    cats[rows[cm], cf[cm]] = True
    sums = np.zeros((len(labels), M))
    counts = cats.sum(axis=0)
    for m in range(M):
        s = model.score_batch(params, reps, users, stores, np.full(len(users), m))
        sums[:, m] = cats.T.astype(np.float64) @ s
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], np.nan)
    return Heatmap(labels, vals, counts)


def _natural(x):
    return (0, int(x), "") if str(x).lstrip("-").isdigit() else (1, 0, str(x))
