"""Synthetic takeaway logs with planted period-varying category preferences.

``P[c, m]`` is the share of category ``c``'s clicks that happen in period
``m`` (rows on the simplex).  Each user has a category affinity ``a_u``;
a record samples the period from ``sum_c a_u(c) P[c, m]``, then the category
from ``a_u(c) P[c, m]``, so the period distribution of every category's
clicks is exactly ``P[c, :]`` in expectation.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import DEFAULT_PERIODS, SECONDS_PER_DAY, Dataset, build_dataset, write_interaction_log
from .errors import ConfigError

CATEGORY_NAMES = ("breakfast", "dish", "noodle", "barbecue", "tea")

# breakfast peaks in Morning, barbecue in LateNight, noodle is flat
DEFAULT_P = (
    (0.70, 0.12, 0.10, 0.08),
    (0.06, 0.46, 0.36, 0.12),
    (0.25, 0.25, 0.25, 0.25),
    (0.04, 0.10, 0.26, 0.60),
    (0.12, 0.30, 0.42, 0.16),
)

# one dominant period per category
PERIODIC_P = (
    (0.88, 0.04, 0.04, 0.04),
    (0.04, 0.88, 0.04, 0.04),
    (0.04, 0.04, 0.88, 0.04),
    (0.04, 0.04, 0.04, 0.88),
    (0.04, 0.04, 0.88, 0.04),
)

BASE_EPOCH = 19700 * SECONDS_PER_DAY  # a UTC midnight


@dataclass
class SynthSpec:
    n_users: int = 2000
    n_stores: int = 100
    n_foods: int = 300
    n_categories: int = 5
    n_days: int = 8
    n_records: int = 60000
    P: tuple = DEFAULT_P
    affinity_concentration: float = 0.6
    store_purity: float = 0.85
    loyalty: float = 4.0
    n_favorites: int = 3
    foods_per_record: tuple = (0.5, 0.3, 0.2)
    menu_size: int = 10
    seed: int = 0
    periods: tuple = field(default=DEFAULT_PERIODS)

    def validate(self):
        for k in ("n_users", "n_stores", "n_foods", "n_categories", "n_days", "n_records"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be >= 1")
        if self.n_categories > self.n_foods:
            raise ConfigError("more categories than foods")
        if self.n_categories > self.n_stores:
            raise ConfigError("more categories than stores")
        P = np.asarray(self.P, dtype=np.float64)
        if P.shape != (self.n_categories, len(self.periods)):
            raise ConfigError(f"P must be {self.n_categories} x {len(self.periods)}, got {P.shape}")
        if (P < 0).any() or not np.allclose(P.sum(axis=1), 1.0, atol=1e-9):
            raise ConfigError("rows of P must lie on the simplex")
        if not 0.0 < self.store_purity <= 1.0:
            raise ConfigError("store_purity must be in (0, 1]")
        fpr = np.asarray(self.foods_per_record)
        if (fpr < 0).any() or not np.isclose(fpr.sum(), 1.0):
            raise ConfigError("foods_per_record must be a distribution")


@dataclass
class SynthResult:
    dataset: Dataset
    P: np.ndarray
    food_category: dict      # raw food id -> category index
    category_names: tuple
    spec: SynthSpec


def _period_minutes(periods):
    out = []
    for a, b in periods:
        out.append(np.arange(a, b) if a < b else np.concatenate([np.arange(a, 1440), np.arange(0, b)]))
    return out


def generate(spec: SynthSpec) -> SynthResult:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    C = spec.n_categories
    P = np.asarray(spec.P, dtype=np.float64)

    food_cat = (np.arange(spec.n_foods) * C) // spec.n_foods
    cat_foods = [np.flatnonzero(food_cat == c) for c in range(C)]

    # stores: a primary category (round-robin so every category has stores)
    # and a secondary one taking the remaining weight
    primary = np.arange(spec.n_stores) % C
    rng.shuffle(primary)
    strength = np.zeros((spec.n_stores, C))
    strength[np.arange(spec.n_stores), primary] = spec.store_purity
    if spec.store_purity < 1.0 and C > 1:
        sec = (primary + rng.integers(1, C, spec.n_stores)) % C
        strength[np.arange(spec.n_stores), sec] += 1.0 - spec.store_purity
    popularity = rng.lognormal(0.0, 0.6, spec.n_stores)

    menus = {}
    for s in range(spec.n_stores):
        for c in np.flatnonzero(strength[s]):
            size = max(1, int(round(spec.menu_size * strength[s, c])))
            pool = cat_foods[c]
            items = rng.choice(pool, size=min(size, len(pool)), replace=False)
            weights = 1.0 / np.arange(1, len(items) + 1)
            menus[s, c] = (items, weights / weights.sum())

    affinity = rng.dirichlet(np.full(C, spec.affinity_concentration), spec.n_users)
    activity = rng.lognormal(0.0, 0.5, spec.n_users)
    activity /= activity.sum()
    fav = np.zeros((spec.n_users, spec.n_stores), dtype=bool)
    for u in range(spec.n_users):
        w = popularity * (strength @ affinity[u])
        k = min(spec.n_favorites, int((w > 0).sum()))
        if k:
            fav[u, rng.choice(spec.n_stores, size=k, replace=False, p=w / w.sum())] = True

    users = rng.choice(spec.n_users, size=spec.n_records, p=activity)
    joint = affinity[users][:, :, None] * P[None, :, :]          # (R, C, M)
    p_m = joint.sum(axis=1)
    periods = _sample_rows(rng, p_m)
    p_c = joint[np.arange(spec.n_records), :, periods]
    cats = _sample_rows(rng, p_c)

    n_food_choices = np.arange(1, len(spec.foods_per_record) + 1)
    n_foods = rng.choice(n_food_choices, size=spec.n_records, p=np.asarray(spec.foods_per_record))
    days = rng.integers(0, spec.n_days, spec.n_records)
    minutes = _period_minutes(spec.periods)

    rows = []
    for i in range(spec.n_records):
        u, c, m = users[i], cats[i], periods[i]
        w = strength[:, c] * popularity * (1.0 + spec.loyalty * fav[u])
        s = rng.choice(spec.n_stores, p=w / w.sum())
        items, fw = menus[s, c]
        foods = rng.choice(items, size=n_foods[i], p=fw)
        minute = minutes[m][rng.integers(len(minutes[m]))]
        t = BASE_EPOCH + int(days[i]) * SECONDS_PER_DAY + int(minute) * 60 + int(rng.integers(60))
        rows.append((t, f"u{u}", f"s{s}", [int(f) for f in foods]))
    rows.sort(key=lambda r: r[0])
    ds = build_dataset(((u, s, f, t) for t, u, s, f in rows), period_table=spec.periods)
    return SynthResult(ds, P, {int(f): int(food_cat[f]) for f in range(spec.n_foods)},
                       tuple(CATEGORY_NAMES[c] if c < len(CATEGORY_NAMES) else f"cat{c}"
                             for c in range(C)), spec)


def _sample_rows(rng, probs):
    """One categorical draw per row of an (n, k) weight matrix."""
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1:]
    r = rng.random(len(probs))[:, None]
    return np.minimum((r > cdf).sum(axis=1), probs.shape[1] - 1)


def empirical_period_shares(dataset: Dataset, food_category: dict, n_categories: int) -> np.ndarray:
    """Per category, the share of its food clicks in each period (rows sum to 1)."""
    cat_of = np.asarray([food_category[dataset.foods.raw(i)] for i in range(len(dataset.foods))])
    lens = dataset.n_foods_per_record()
    per = np.repeat(dataset.period, lens)
    counts = np.zeros((n_categories, dataset.n_periods))
    np.add.at(counts, (cat_of[dataset.food_idx], per), 1)
    return counts / np.maximum(counts.sum(axis=1, keepdims=True), 1)


def write_outputs(result: SynthResult, out_dir) -> dict:
    """Write data CSV, category map, planted truth and a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "data": os.path.join(out_dir, "interactions.csv"),
        "category_map": os.path.join(out_dir, "food_categories.csv"),
        "planted_truth": os.path.join(out_dir, "planted_truth.csv"),
        "manifest": os.path.join(out_dir, "manifest.json"),
    }
    with open(paths["data"], "w", newline="", encoding="utf-8") as fh:
        write_interaction_log(result.dataset, fh)
    with open(paths["category_map"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["food_id", "category"])
        for f in sorted(result.food_category):
            w.writerow([f, result.category_names[result.food_category[f]]])
    with open(paths["planted_truth"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["category"] + [f"period_{m}" for m in range(result.P.shape[1])])
        for c, row in enumerate(result.P):
            w.writerow([result.category_names[c]] + [repr(float(x)) for x in row])
    spec = asdict(result.spec)
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        json.dump({"spec": spec, "n_records": len(result.dataset),
                   "categories": list(result.category_names),
                   "files": {k: os.path.basename(v) for k, v in paths.items() if k != "manifest"}},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def read_category_map(path) -> dict:
    """``food_id,category`` CSV -> {food_id: category label}."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.DictReader(fh)
        if r.fieldnames is None or "food_id" not in r.fieldnames or "category" not in r.fieldnames:
            raise ConfigError(f"{path}: expected header food_id,category")
        for row in r:
            out[int(row["food_id"])] = row["category"].strip()
    return out


def read_planted_truth(path):
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        next(r)
        names, rows = [], []
        for row in r:
            names.append(row[0])
            rows.append([float(x) for x in row[1:]])
    return names, np.asarray(rows)
