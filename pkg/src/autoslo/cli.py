"""Command-line entry point.

    autoslo traindata --preset shop --hours 10 --out data.csv
    autoslo fit data.csv --model forest --out model.npz
    autoslo run --preset shop --scaler autoslo --model model.npz --reps 10 --out-dir runs/autoslo
    autoslo compare runs/autoslo runs/ran runs/hpa --out table.csv
    autoslo preset shop > shop.yaml

Exit status is 0 on success, 2 for configuration or usage errors and 1 for
failures while running.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import config as cfgmod
from . import stats, surrogate
from .controller import SCALERS, run_experiment


class UsageError(Exception):
    pass


def _positive(kind):
    def parse(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return parse


def _load(args) -> cfgmod.ExperimentConfig:
    if args.config:
        return cfgmod.load_config(args.config)
    return cfgmod.preset(args.preset)


def _add_config_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--preset", choices=sorted(cfgmod.PRESETS), default="shop")
    g.add_argument("--config", help="YAML experiment file (may extend a preset)")


def cmd_traindata(args) -> int:
    cfg = _load(args)
    td = cfg.traindata
    hours = args.hours if args.hours is not None else float(td.get("hours", 10.0))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    records = surrogate.collect_training_data(
        cfg.services, cfg.bottlenecks, cfg.slo.metric, hours * 3600.0, args.seed,
        float(td.get("max_rate", 100.0)), float(td.get("interval_s", cfg.update_s)),
        float(td.get("hold_s", 120.0)), out=out)
    print(f"wrote {len(records)} records to {out}")
    return 0


def cmd_fit(args) -> int:
    path = Path(args.data)
    if not path.is_file():
        raise UsageError(f"training data file not found: {path}")
    try:
        schema, records = surrogate.read_records_csv(path)
    except surrogate.SurrogateError as exc:
        raise UsageError(str(exc)) from None
    kw = {}
    if args.model == "forest":
        kw = dict(n_trees=args.trees, max_depth=args.max_depth, min_leaf=args.min_leaf,
                  bootstrap=not args.no_bootstrap)
    model = surrogate.fit(records, schema, kind=args.model, seed=args.seed, holdout=args.holdout, **kw)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    r2 = "undefined" if model.r2 is None or model.r2 != model.r2 else f"{model.r2:.6f}"
    mae = "n/a" if model.mae is None else f"{model.mae:.6g}"
    print(f"model={model.kind} records={len(records)} r2={r2} mae={mae} -> {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _load(args)
    model = None
    if args.scaler != "hpa":
        if not args.model:
            raise UsageError(f"--scaler {args.scaler} needs --model")
        if not Path(args.model).is_file():
            raise UsageError(f"model file not found: {args.model}")
        try:
            model = surrogate.SurrogateModel.load(args.model)
        except surrogate.SurrogateError as exc:
            raise UsageError(str(exc)) from None
        if list(model.bottlenecks) != list(cfg.bottlenecks):
            raise UsageError(f"model covers {model.bottlenecks}, config names {list(cfg.bottlenecks)}")
    result = run_experiment(cfg, [args.scaler], args.reps, args.seed, model, args.out_dir)
    d = result.by_scaler()[args.scaler]
    print(f"{cfg.name} {args.scaler}: reps={args.reps} mean_pods={sum(d['pods']) / len(d['pods']):.3f} "
          f"mean_violations={sum(d['violations']) / len(d['violations']):.2f} -> {args.out_dir}")
    return 0


def read_summary(path) -> dict:
    """``{case: {scaler: {"pods": [...], "violations": [...]}}}`` from a summary CSV."""
    out: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["seed"] == "mean":
                continue
            d = out.setdefault(row["case"], {}).setdefault(row["scaler"], {"pods": [], "violations": []})
            d["pods"].append(float(row["mean_pods"]))
            d["violations"].append(float(row["violations"]))
    return out


def cmd_compare(args) -> int:
    merged: dict = {}
    for d in args.dirs:
        path = Path(d) / "summary.csv"
        if not path.is_file():
            raise UsageError(f"no summary.csv in {d}")
        for case, by_scaler in read_summary(path).items():
            merged.setdefault(case, {}).update(by_scaler)
    try:
        rows = stats.build_table(merged)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stats.write_table(out, rows)
    for r in rows:
        flag = "*" if r.significant else " "
        print(f"{r.case:8s} {r.metric:10s} vs {r.baseline:4s} autoslo={r.autoslo_mean:8.3f} "
              f"{r.baseline}={r.baseline_mean:8.3f} p={r.p_value:.4g}{flag} A12={r.a12:.2f} ({r.label})")
    return 0


def cmd_preset(args) -> int:
    sys.stdout.write(cfgmod.dump_preset(args.name))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="autoslo", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("traindata", help="simulate randomized load and write surrogate training data")
    _add_config_args(t)
    t.add_argument("--hours", type=_positive(float), help="simulated hours (default from config)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_traindata)

    f = sub.add_parser("fit", help="train a surrogate model and report held-out R^2 and MAE")
    f.add_argument("data")
    f.add_argument("--model", choices=sorted(surrogate.REGRESSORS), default="forest")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--trees", type=_positive(int), default=100)
    f.add_argument("--max-depth", type=_positive(int), default=None)
    f.add_argument("--min-leaf", type=_positive(int), default=2)
    f.add_argument("--no-bootstrap", action="store_true")
    f.add_argument("--holdout", type=float, default=0.2)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("run", help="run seeded repetitions of one scaler")
    _add_config_args(r)
    r.add_argument("--scaler", choices=SCALERS, required=True)
    r.add_argument("--model", help="surrogate model file (not needed for hpa)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--reps", type=_positive(int), default=10)
    r.add_argument("--out-dir", required=True)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="rank-sum and A12 table from run directories")
    c.add_argument("dirs", nargs="+")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("preset", help="print a built-in preset as YAML")
    s.add_argument("name", choices=sorted(cfgmod.PRESETS))
    s.set_defaults(func=cmd_preset)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, cfgmod.ConfigError) as exc:
        print(f"autoslo: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"autoslo: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
