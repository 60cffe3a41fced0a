"""Command line entry point: ``kipg run|ablation|events|weights|explain|rollout|features``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .features import DEFAULT_SCHEMA, dump_clauses, enumerate_clauses
from .sim import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UNREACHED = 3


def _emit(table: harness.ReportTable, args, summary_by=None) -> None:
    out_dir = Path(args.out) if args.out else None
    text = table.to_text()
    if summary_by:
        text += "\n" + table.summary(summary_by, args.summary_value).to_text()
    print(text, end="")
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = args.command
        (out_dir / f"{stem}.csv").write_text(table.to_csv())
        (out_dir / f"{stem}.txt").write_text(text)


def _unreached(table: harness.ReportTable) -> bool:
    return any(r.get("time_to_threshold", 0) is None for r in table.rows)


def cmd_run(args) -> int:
    cfg = harness.load_config(args.config)
    sc = harness.build_scenario(cfg)
    table = harness.run_comparison(cfg, sc)
    args.summary_value = "pass_rate"
    _emit(table, args, ["method", "budget"])
    if args.out:
        # keep the final model of each method (first seed) for `kipg explain`
        for method in cfg.methods:
            run = harness.train(sc, method, cfg.seeds[0])
            model = harness.evaluated_model(cfg, run, cfg.n_batches)
            harness.save_model(model, sc.clauses, Path(args.out) / f"{method}.model")
    return EXIT_UNREACHED if args.strict and _unreached(table) else EXIT_OK


def cmd_ablation(args) -> int:
    cfg = harness.load_config(args.config)
    table = harness.run_ablation(cfg)
    args.summary_value = "difference"
    _emit(table, args, ["method", "budget"])
    return EXIT_OK


def cmd_events(args) -> int:
    cfg = harness.load_config(args.config)
    table = harness.run_event_study(cfg)
    args.summary_value = "time_to_threshold"
    _emit(table, args, ["method"])
    return EXIT_UNREACHED if args.strict and _unreached(table) else EXIT_OK


def cmd_weights(args) -> int:
    cfg = harness.load_config(args.config)
    table = harness.run_interpretability(cfg)
    args.summary_value = "agreement"
    _emit(table, args, ["method"] if cfg.explain_reference else None)
    return EXIT_OK


def cmd_rollout(args) -> int:
    cfg = harness.load_config(args.config)
    sc = harness.build_scenario(cfg)
    if args.policy == "oracle":
        choose = harness.oracle_chooser(sc.oracle, cfg.actions)
    else:
        choose = harness.model_chooser(harness.initial_model(cfg, len(sc.clauses)), (args.seed,))
    ep = harness.rollout(cfg, sc.featurizer, args.seed, choose)
    text = harness.dumps_trajectory(ep, cfg.actions)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return EXIT_OK


def cmd_explain(args) -> int:
    model, clauses = harness.load_model(args.model)
    if args.features:
        from .features import load_clauses
        clauses = load_clauses(Path(args.features).read_text())
    if len(clauses) != model.n_features:
        raise ConfigError("features", f"model has {model.n_features} inputs but {len(clauses)} clauses are known")
    report = harness.interpretability_report(model, args.action, clauses, top=args.top)
    print(f"input-layer weights for {report['action']}")
    for rank, (cid, weight, text) in enumerate(report["ranking"], start=1):
        marker = "*" if rank <= args.top else " "
        print(f"{marker}{rank:3d}  id {cid:<4d} {weight:10.6f}  {text}")
    return EXIT_OK


def cmd_features(args) -> int:
    cfg = harness.load_config(args.config)
    if args.enumerate:
        clauses = enumerate_clauses(DEFAULT_SCHEMA, max_len=cfg.max_len)
    else:
        clauses = harness.choose_features(cfg, harness.make_oracle(cfg))
    text = dump_clauses(clauses)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kipg", description="Knowledge-infused functional policy gradient lab")
    sub = p.add_subparsers(dest="command", required=True)

    for name, fn, helptext in (("run", cmd_run, "compare infusion methods across trajectory budgets"),
                               ("ablation", cmd_ablation, "paired runs with aggregation on and off"),
                               ("events", cmd_events, "batches needed to reach the pass threshold under events"),
                               ("weights", cmd_weights, "top input-layer weights per seed for the [explain] action")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", help="experiment .cfg file (or the name of a bundled one)")
        sp.add_argument("--out", help="directory for CSV/text reports")
        sp.add_argument("--strict", action="store_true",
                        help="exit with status 3 if any run never reaches the pass threshold")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("explain", help="rank input-layer weights of a saved model")
    sp.add_argument("model")
    sp.add_argument("--action", required=True)
    sp.add_argument("--top", type=int, default=2)
    sp.add_argument("--features", help="clause file, if the model file carries no clause header")
    sp.set_defaults(func=cmd_explain)

    sp = sub.add_parser("rollout", help="dump one simulated episode as JSON lines")
    sp.add_argument("config")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--policy", choices=("oracle", "uniform"), default="oracle")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_rollout)

    sp = sub.add_parser("features", help="dump the selected (or all enumerated) clauses")
    sp.add_argument("config")
    sp.add_argument("--enumerate", action="store_true", help="dump every candidate clause instead")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_features)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
