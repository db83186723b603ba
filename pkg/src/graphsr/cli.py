"""Command line entry point: convert, run, scales, diagnose, table."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .experiment import ExperimentConfig, RunResult, diagnose_precision_recall, emit_table, report_scales, run_method
from .graph import load_dataset, save_canonical


def _config(args) -> ExperimentConfig:
    overrides = list(args.set or [])
    for flag, key in (("dataset", "dataset"), ("method", "method"), ("arch", "arch"), ("rho", "imbalance_ratio"),
                      ("out", "out_dir"), ("run_id", "run_id"), ("workers", "workers")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    if getattr(args, "seeds", None):
        overrides.append(f"seeds=[{args.seeds}]")
    return ExperimentConfig.load(args.config, overrides)


def cmd_convert(args) -> dict:
    g = load_dataset(args.input, args.format, args.name, normalize=not args.raw_features,
                     skip_dangling=args.skip_dangling)
    out = save_canonical(g, args.output)
    return {"output": str(out), "num_nodes": g.num_nodes, "num_edges": g.num_edges,
            "num_features": g.num_features, "num_classes": g.num_classes}


def cmd_run(args) -> dict:
    cfg = _config(args)
    result = run_method(cfg)
    run_dir = Path(cfg.out_dir) / cfg.resolved_run_id
    return {"run_dir": str(run_dir), "mean": result.mean, "std": result.std,
            "failures": {str(k): v for k, v in result.failures.items()}, "seconds": round(result.seconds, 3)}


def _load_results(paths) -> list[RunResult]:
    out = []
    for p in paths:
        p = Path(p)
        out.append(RunResult.load(p / "result.json" if p.is_dir() else p))
    return out


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_scales(args) -> None:
    _emit(report_scales(_load_results(args.results)), args.output)


def cmd_diagnose(args) -> dict:
    cfg = dataclasses.replace(_config(args), method="vanilla")
    rep = diagnose_precision_recall(cfg)
    return {str(seed): [dataclasses.asdict(r) for r in rows] for seed, rows in rep.items()}


def cmd_table(args) -> None:
    csv_text, text = emit_table(_load_results(args.results))
    if args.csv:
        Path(args.csv).write_text(csv_text)
    sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphsr", description="Imbalanced node classification with RL-selected pseudo-labels.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert", help="ingest a raw dataset into the canonical directory format")
    c.add_argument("--input", required=True)
    c.add_argument("--output", required=True)
    c.add_argument("--format", default="planetoid-raw", choices=["planetoid-raw", "canonical"])
    c.add_argument("--name")
    c.add_argument("--raw-features", action="store_true", help="skip L1 row normalization")
    c.add_argument("--skip-dangling", action="store_true", help="drop edges to unknown node ids")
    c.set_defaults(func=cmd_convert)

    def experiment_args(sp):
        sp.add_argument("--config", help="TOML config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override, e.g. rl.epochs=5")
        sp.add_argument("--dataset")
        sp.add_argument("--arch", choices=["gcn", "sage"])
        sp.add_argument("--rho", type=float)
        sp.add_argument("--seeds", help="comma-separated seed list")
        sp.add_argument("--out")
        sp.add_argument("--run-id", dest="run_id")
        sp.add_argument("--workers", type=int)

    r = sub.add_parser("run", help="train and evaluate one method over all seeds")
    experiment_args(r)
    r.add_argument("--method")
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("diagnose", help="per-class precision/recall of the vanilla classifier")
    experiment_args(d)
    d.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("scales", help="per-class supplement sizes from graphsr results")
    s.add_argument("results", nargs="+", help="result.json files or run directories")
    s.add_argument("--output")
    s.set_defaults(func=cmd_scales)

    t = sub.add_parser("table", help="comparison table over several results")
    t.add_argument("results", nargs="+")
    t.add_argument("--csv")
    t.set_defaults(func=cmd_table)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        out = args.func(args)
    except Exception as e:
        json.dump({"error": type(e).__name__, "message": str(e)}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    if out is not None:
        json.dump(out, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
