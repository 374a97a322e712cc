"""``dpvp`` command-line entry point.

Exit codes: 0 success, 1 usage / configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import load_config
from .data import read_interaction_log, split_by_day
from .errors import ConfigError, DataError, DPVPError
from .evaluator import Evaluator, category_period_heatmap
from .gating import GATE_MODES
from .gradcheck import run_all
from .graph import build_graphs
from .model import VARIANTS, DPVPModel, make_variant
from .synth import DEFAULT_P, PERIODIC_P, SynthSpec, generate, read_category_map, write_outputs
from .trainer import train

log = logging.getLogger("dpvp")

COMMANDS = ("synth", "train", "eval", "ablate", "gradcheck", "heatmap")


class UsageError(Exception):
    pass


def _split_overrides(rest):
    pairs = {}
    i = 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(rest):
                raise UsageError(f"missing value for --{key}")
            val = rest[i + 1]
            i += 2
        pairs[key] = val
    return pairs


def _write(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# -- shared pipeline ------------------------------------------------------------

def load_splits(cfg):
    if not cfg.data:
        raise ConfigError("config key 'data' (interaction CSV) is required")
    if not os.path.exists(cfg.data):
        raise ConfigError(f"data file {cfg.data} not found")
    ds = read_interaction_log(cfg.data, tz_offset=cfg.tz_offset_minutes,
                              period_table=cfg.period_table, strict=cfg.strict)
    if ds.skipped_rows:
        log.warning("skipped %d malformed rows", ds.skipped_rows)
    return split_by_day(ds, cfg.split_spec)


def build_model(cfg, train_ds, model_config=None):
    graphs = build_graphs(train_ds, cfg.n_prime)
    return DPVPModel(model_config or cfg.model_config(), graphs)


def _checkpoint_path(cfg):
    return cfg.checkpoint or cfg.path("checkpoint.dpvp")


def _node_counts(model):
    return (model.n_users, model.n_stores, model.n_foods)


def history_csv(history):
    keys = []
    for rec in history:
        keys += [k for k in rec if k not in keys]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for rec in history:
        w.writerow([repr(rec[k]) if isinstance(rec.get(k), float) else rec.get(k, "") for k in keys])
    return buf.getvalue()


# -- commands ---------------------------------------------------------------------

def cmd_synth(cfg):
    if cfg.synth_pattern == "flat":
        P = tuple(tuple(1.0 / cfg.n_periods for _ in range(cfg.n_periods))
                  for _ in range(cfg.synth_categories))
    elif cfg.synth_pattern in ("default", "periodic"):
        P = DEFAULT_P if cfg.synth_pattern == "default" else PERIODIC_P
        if cfg.synth_categories != len(P) or cfg.n_periods != len(P[0]):
            raise ConfigError(f"synth_pattern {cfg.synth_pattern} is defined for "
                              f"{len(P)} categories x {len(P[0])} periods; use synth_pattern=flat")
    else:
        raise ConfigError(f"synth_pattern must be default, periodic or flat, got {cfg.synth_pattern!r}")
    spec = SynthSpec(n_users=cfg.synth_users, n_stores=cfg.synth_stores, n_foods=cfg.synth_foods,
                     n_categories=cfg.synth_categories, n_days=cfg.synth_days,
                     n_records=cfg.synth_records, P=P, seed=cfg.seed, periods=cfg.period_table)
    paths = write_outputs(generate(spec), cfg.out_dir)
    for k, p in paths.items():
        print(f"{k}: {p}")
    return 0


def cmd_train(cfg):
    tr, va, te = load_splits(cfg)
    model = build_model(cfg, tr)
    res = train(model, tr, va, cfg.train_config())
    os.makedirs(cfg.out_dir, exist_ok=True)
    ck = _checkpoint_path(cfg)
    save_checkpoint(ck, model.config, res.params, _node_counts(model))
    _write(cfg.path("history.csv"), history_csv(res.history))
    _write(cfg.path("run.cfg"), cfg.dumps())
    print(f"checkpoint: {ck} (best epoch {res.best_epoch})")
    return 0


def _load_for_eval(cfg):
    ck = _checkpoint_path(cfg)
    if not os.path.exists(ck):
        raise ConfigError(f"checkpoint {ck} not found")
    mcfg, params, counts = load_checkpoint(ck)
    tr, va, te = load_splits(cfg)
    model = build_model(cfg, tr, mcfg)
    if _node_counts(model) != tuple(counts):
        raise CheckpointError("checkpoint was trained on a different training split")
    return model, params, (tr, va, te)


def cmd_eval(cfg):
    model, params, (tr, va, te) = _load_for_eval(cfg)
    ev = Evaluator(model, params, [tr, va, te], K=cfg.K, n_negatives=cfg.eval_negatives)
    rep = ev.evaluate(te, seed=cfg.seed, split="test")
    _write(cfg.path("report.csv"), rep.to_csv())
    _write(cfg.path("eval_summary.json"), json.dumps(rep.summary(), indent=2, sort_keys=True) + "\n")
    if cfg.category_map:
        hm = ev.heatmap(te, read_category_map(cfg.category_map))
        _write(cfg.path("heatmap.csv"), hm.to_csv())
    sys.stdout.write(rep.to_csv())
    return 0


def cmd_heatmap(cfg):
    if not cfg.category_map:
        raise ConfigError("config key 'category_map' is required for heatmap")
    model, params, (tr, va, te) = _load_for_eval(cfg)
    hm = category_period_heatmap(te, model, params, read_category_map(cfg.category_map))
    _write(cfg.path("heatmap.csv"), hm.to_csv())
    sys.stdout.write(hm.to_csv())
    return 0


ABLATION_FIELDS = ("variant", "status", "emb_dim", "mlp_input", "hit", "ndcg", "mrr", "auc",
                   "evaluated", "best_epoch")


def cmd_ablate(cfg):
    tags = cfg.variants or tuple(VARIANTS)
    for t in tags:
        if t not in VARIANTS:
            raise ConfigError(f"unknown variant {t!r}")
    tr, va, te = load_splits(cfg)
    graphs = build_graphs(tr, cfg.n_prime)
    rows, failed = [], False
    for tag in tags:
        mcfg = cfg.model_config(tag)
        lay = make_variant(tag, mcfg)
        row = {"variant": tag, "emb_dim": lay.emb_dim, "mlp_input": lay.mlp_input}
        try:
            model = DPVPModel(mcfg, graphs)
            res = train(model, tr, va, cfg.train_config())
            rep = Evaluator(model, res.params, [tr, va, te], K=cfg.K,
                            n_negatives=cfg.eval_negatives).evaluate(te, seed=cfg.seed)
            row.update({m: repr(rep.overall[m]) for m in ("hit", "ndcg", "mrr", "auc")},
                       status="ok", evaluated=rep.evaluated, best_epoch=res.best_epoch)
        except Exception as exc:  # keep going; the row records the failure
            log.error("variant %s failed: %s", tag, exc)
            row["status"] = "failed"
            failed = True
        rows.append(row)
        print(",".join(str(row.get(k, "")) for k in ABLATION_FIELDS), flush=True)
    buf = io.StringIO()
    w = csv.DictWriter(buf, ABLATION_FIELDS, restval="", lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    _write(cfg.path("ablation.csv"), buf.getvalue())
    return 2 if failed else 0


def _corrupt(grads):
    k = next(iter(grads))
    grads[k] = grads[k] * 1.01 + 1e-3
    return grads


def cmd_gradcheck(cfg):
    variants = cfg.variants or tuple(VARIANTS)
    res = run_all(variants=variants, modes=GATE_MODES, seed=cfg.seed, step=cfg.gradcheck_step,
                  tol=cfg.gradcheck_tol, corrupt=_corrupt if cfg.gradcheck_corrupt else None)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "gate_mode", "group", "size", "max_rel_err", "status"])
    ok = True
    for (v, mode), groups in res.items():
        for g in groups:
            w.writerow([v, mode, g.name, g.size, f"{g.max_rel_err:.3e}", "pass" if g.passed else "FAIL"])
            ok &= g.passed
    w.writerow(["ALL", "", "", "", "", "pass" if ok else "FAIL"])
    _write(cfg.path("gradcheck.csv"), buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return 0 if ok else 2


HANDLERS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "gradcheck": cmd_gradcheck, "heatmap": cmd_heatmap}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dpvp", description="Dual period-varying takeaway recommender.",
        epilog="Any config key can be overridden with --key value.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", "-c", help="flat key = value config file")
    parser.add_argument("--verbose", "-v", action="store_true")
    try:
        args, rest = parser.parse_known_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _split_overrides(rest))
    except (UsageError, ConfigError) as exc:
        print(f"dpvp: {exc}", file=sys.stderr)
        return 1
    try:
        return HANDLERS[args.command](cfg)
    except (ConfigError, DataError) as exc:
        print(f"dpvp {args.command}: {exc}", file=sys.stderr)
        return 1
    except (DPVPError, OSError, FloatingPointError) as exc:
        print(f"dpvp {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
