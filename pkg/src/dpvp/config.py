"""Flat ``key = value`` run configuration with command-line overrides."""
from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace

from .data import DEFAULT_PERIODS, SplitSpec, format_period_table, parse_period_table
from .errors import ConfigError
from .model import ModelConfig
from .trainer import TrainConfig

SEED_ENV = "DPVP_SEED"


@dataclass(frozen=True)
class RunConfig:
    # paths
    data: str = ""
    out_dir: str = "runs/default"
    checkpoint: str = ""
    category_map: str = ""
    # ingestion
    tz_offset_minutes: int = 0
    periods: str = format_period_table(DEFAULT_PERIODS)
    split: str = "6,1,1"
    strict: bool = True
    # model
    variant: str = "full"
    embedding_dim: int = 100
    layers: int = 2
    n_prime: int = 10
    mlp_hidden: tuple = (400, 200)
    gate_mode: str = "target_conditioned"
    dtype: str = "float64"
    # optimisation
    lr: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 1024
    epochs: int = 20
    neg_per_pos: int = 1
    seed: int = 0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    patience: int = 0
    decay_embeddings: bool = True
    val_max_instances: int = 2000
    # evaluation
    K: int = 10
    eval_negatives: int = 99
    # ablation
    variants: tuple = ()
    # gradient check
    gradcheck_step: float = 1e-4
    gradcheck_tol: float = 1e-4
    gradcheck_corrupt: bool = False
    # synthetic data
    synth_users: int = 2000
    synth_stores: int = 100
    synth_foods: int = 300
    synth_categories: int = 5
    synth_days: int = 8
    synth_records: int = 60000
    synth_pattern: str = "default"

    @property
    def period_table(self):
        return parse_period_table(self.periods)

    @property
    def n_periods(self) -> int:
        return len(self.period_table)

    @property
    def split_spec(self) -> SplitSpec:
        return SplitSpec.parse(self.split)

    def model_config(self, variant: str | None = None) -> ModelConfig:
        return ModelConfig(variant=variant or self.variant, embedding_dim=self.embedding_dim,
                           layers=self.layers, n_periods=self.n_periods, n_prime=self.n_prime,
                           mlp_hidden=self.mlp_hidden, gate_mode=self.gate_mode, dtype=self.dtype)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, weight_decay=self.weight_decay, batch_size=self.batch_size,
                           epochs=self.epochs, neg_per_pos=self.neg_per_pos, seed=self.seed,
                           adam_betas=self.adam_betas, adam_eps=self.adam_eps,
                           patience=self.patience, decay_embeddings=self.decay_embeddings,
                           val_max_instances=self.val_max_instances, K=self.K,
                           eval_negatives=self.eval_negatives)

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def with_overrides(self, pairs: dict) -> "RunConfig":
        known = {f.name: f for f in fields(self)}
        kw = {}
        for k, v in pairs.items():
            k = k.replace("-", "_")
            if k not in known:
                raise ConfigError(f"unknown config key {k!r}")
            kw[k] = _coerce(known[k].default, v, k)
        return replace(self, **kw)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(default, raw, key):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if key in ("mlp_hidden",):
                return tuple(int(x) for x in items)
            if key in ("adam_betas",):
                return tuple(float(x) for x in items)
            return tuple(items)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path: str | None = None, overrides: dict | None = None, env=None) -> RunConfig:
    """File values, then overrides, then ``DPVP_SEED`` from the environment."""
    cfg = RunConfig()
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = cfg.with_overrides(parse_config_text(fh.read()))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
    if overrides:
        cfg = cfg.with_overrides(overrides)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        cfg = cfg.with_overrides({"seed": env[SEED_ENV]})
    # validate derived pieces eagerly
    cfg.period_table
    cfg.split_spec
    cfg.model_config()
    return cfg
