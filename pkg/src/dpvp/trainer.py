"""BPR training with sampled negatives and AdamW updates."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError, DPVPError
from .model import DPVPModel, loss_and_grads

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 1024
    epochs: int = 20
    neg_per_pos: int = 1
    seed: int = 0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    patience: int = 0            # 0 disables early stopping
    decay_embeddings: bool = True
    val_max_instances: int = 2000
    probe_size: int = 4096
    K: int = 10
    eval_negatives: int = 99

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if self.batch_size < 1 or self.neg_per_pos < 1 or self.epochs < 0:
            raise ConfigError("batch_size >= 1, neg_per_pos >= 1 and epochs >= 0 required")
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))


class TrainingDiverged(DPVPError):
    pass


# -- negatives ----------------------------------------------------------------------

def interaction_matrix(datasets, n_users: int, n_stores: int) -> np.ndarray:
    """Boolean (user, store) matrix of interactions among training entities."""
    seen = np.zeros((n_users, n_stores), dtype=bool)
    for ds in datasets:
        ok = (ds.user < n_users) & (ds.store < n_stores)
        seen[ds.user[ok], ds.store[ok]] = True
    return seen


class NegativeSampler:
    """Uniform draws over stores the user never touched in training and that
    have candidate foods."""

    def __init__(self, interacted: np.ndarray, scorable: np.ndarray):
        self.eligible = ~interacted & scorable[None, :]
        self.counts = self.eligible.sum(axis=1)
        self._cum = np.cumsum(self.eligible, axis=1)

    def sample(self, users, rng):
        """Returns ``(stores, ok)``; ``ok`` is False where no store is eligible."""
        users = np.asarray(users, dtype=np.int64)
        cnt = self.counts[users]
        ok = cnt > 0
        r = np.floor(rng.random(len(users)) * np.maximum(cnt, 1)).astype(np.int64)
        stores = np.zeros(len(users), dtype=np.int64)
        if ok.any():
            cum = self._cum[users[ok]]
            stores[ok] = (cum <= r[ok, None]).sum(axis=1)
        return stores, ok


def sample_negative(u: int, rng, sampler: NegativeSampler):
    s, ok = sampler.sample([u], rng)
    return int(s[0]) if ok[0] else None


# -- loss / gradients -------------------------------------------------------------

@dataclass
class TripletBatch:
    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    periods: np.ndarray
    weights: np.ndarray | None = None

    def __len__(self):
        return len(self.users)


def bpr_loss(batch: TripletBatch, params, model: DPVPModel) -> float:
    loss, _ = loss_and_grads(model, params, batch.users, batch.pos, batch.neg, batch.periods,
                             batch.weights, need_grads=False)
    return loss


def compute_gradients(batch: TripletBatch, params, model: DPVPModel):
    return loss_and_grads(model, params, batch.users, batch.pos, batch.neg, batch.periods,
                          batch.weights)[1]


# -- optimiser -------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adamw_step(params: dict, grads: dict, state: OptimizerState, config: TrainConfig,
               decay_mask: dict | None = None):
    """One decoupled-weight-decay Adam update, in place.  Returns (params, state)."""
    b1, b2 = config.adam_betas
    state.step += 1
    t = state.step
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            continue
        if g.shape != p.shape:
            raise AssertionError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k}")
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if config.weight_decay and (decay_mask is None or decay_mask.get(k, True)):
            p *= 1.0 - config.lr * config.weight_decay
        p -= config.lr * (m / bc1) / (np.sqrt(v / bc2) + config.adam_eps)
    return params, state


# -- loop --------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: dict                 # best-validation parameters
    final_params: dict
    history: list
    init_params: dict
    best_epoch: int
    skipped_positives: int = 0


def positives(train: Dataset):
    ok = train.seen_mask()
    idx = np.flatnonzero(ok)
    return train.user[idx], train.store[idx], train.period[idx]


def train(model: DPVPModel, train_ds: Dataset, val_ds: Dataset | None, config: TrainConfig,
          params: dict | None = None, evaluator_factory=None, progress=None) -> TrainResult:
    """Epoch loop: shuffle positives, fresh negatives, full propagation per step.

    Keeps the parameters with the best validation Hit@K.
    """
    rng = np.random.default_rng(config.seed)
    params = model.init_params(config.seed) if params is None else params
    init = {k: v.copy() for k, v in params.items()}
    interacted = interaction_matrix([train_ds], model.n_users, model.n_stores)
    sampler = NegativeSampler(interacted, model.scorable_store)
    pu, ps, pm = positives(train_ds)
    keep = model.scorable_store[ps]
    pu, ps, pm = pu[keep], ps[keep], pm[keep]
    decay_mask = None
    if not config.decay_embeddings:
        decay_mask = {k: not k.startswith("emb_") for k in params}

    probe = _probe_batch(pu, ps, pm, sampler, config)
    if evaluator_factory is None and val_ds is not None and len(val_ds):
        from .evaluator import Evaluator
        def evaluator_factory(p):
            return Evaluator(model, p, [train_ds, val_ds], K=config.K,
                             n_negatives=config.eval_negatives)
    history = [{"epoch": 0, "probe_loss": bpr_loss(probe, params, model)}]
    if evaluator_factory is not None and val_ds is not None:
        history[0]["val_hit"] = _val_hit(evaluator_factory(params), val_ds, config)
    best = history[0].get("val_hit", -math.inf)
    best_params = {k: v.copy() for k, v in params.items()}
    best_epoch = 0
    state = OptimizerState()
    skipped_total = 0
    bad_epochs = 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(pu))
        users = np.repeat(pu[order], config.neg_per_pos)
        pos = np.repeat(ps[order], config.neg_per_pos)
        per = np.repeat(pm[order], config.neg_per_pos)
        neg, ok = sampler.sample(users, rng)
        skipped_total += int((~ok).sum())
        users, pos, per, neg = users[ok], pos[ok], per[ok], neg[ok]
        if interacted[users, neg].any():
            raise AssertionError("sampled negative is a training interaction")
        losses, sizes = [], []
        for a in range(0, len(users), config.batch_size):
            sl = slice(a, a + config.batch_size)
            loss, grads = loss_and_grads(model, params, users[sl], pos[sl], neg[sl], per[sl])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {a // config.batch_size}")
            adamw_step(params, grads, state, config, decay_mask)
            losses.append(loss)
            sizes.append(len(users[sl]))
        rec = {
            "epoch": epoch,
            "train_loss": float(np.average(losses, weights=sizes)) if losses else float("nan"),
            "probe_loss": bpr_loss(probe, params, model),
            "seconds": time.perf_counter() - t0,
        }
        if evaluator_factory is not None and val_ds is not None:
            rec["val_hit"] = _val_hit(evaluator_factory(params), val_ds, config)
            if rec["val_hit"] > best:
                best, best_epoch, bad_epochs = rec["val_hit"], epoch, 0
                best_params = {k: v.copy() for k, v in params.items()}
            else:
                bad_epochs += 1
        else:
            best_params = {k: v.copy() for k, v in params.items()}
            best_epoch = epoch
        history.append(rec)
        log.info("epoch %d %s", epoch, {k: round(v, 5) if isinstance(v, float) else v
                                        for k, v in rec.items()})
        if progress is not None:
            progress(rec)
        if config.patience and bad_epochs >= config.patience:
            break
    return TrainResult(best_params, params, history, init, best_epoch, skipped_total)


def _probe_batch(pu, ps, pm, sampler, config):
    """Fixed triplets, drawn once, on which the loss is tracked across epochs."""
    rng = np.random.default_rng([config.seed, 1])
    n = min(config.probe_size, len(pu))
    idx = rng.choice(len(pu), size=n, replace=False) if n else np.zeros(0, dtype=np.int64)
    neg, ok = sampler.sample(pu[idx], rng)
    idx, neg = idx[ok], neg[ok]
    return TripletBatch(pu[idx], ps[idx], neg, pm[idx])


def _val_hit(evaluator, val_ds, config):
    rep = evaluator.evaluate(val_ds, seed=config.seed, max_instances=config.val_max_instances,
                             split="val")
    return rep.overall["hit"]
