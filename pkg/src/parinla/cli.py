"""Batch command line front end.

Subcommands: ``fit`` runs inference on a model/data pair and writes
marginals, the iteration trace and a run summary; ``bench`` repeats a fit
over a sweep of thread budgets and tabulates time per function
evaluation; ``synth`` writes a seeded synthetic model, dataset and ground
truth.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParinlaError
from .fit import FitConfig, FitResult, fit
from .marginals import write_hyper_json, write_marginals_csv
from .model import load_model
from .optimizer import FDConfig, LineSearchConfig
from .runtime import default_budget, parse_budget
from .synth import KINDS, make_synth, write_synth


def _add_fit_args(p: argparse.ArgumentParser):
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--data", required=True, help="data CSV file")
    p.add_argument("--threads", default="auto", help='level-1:level-2 budget, e.g. "4:2"')
    p.add_argument("--strategy", choices=("eb", "grid"), default="eb")
    p.add_argument("--diff", choices=("forward", "central", "mixed"), default="mixed")
    p.add_argument("--linesearch", choices=("parallel", "serial"), default="parallel")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--fd-eps", type=float, default=5e-3, help="finite-difference step")
    p.add_argument("--theta0", default=None, help="comma-separated start, default zeros")


def _fit_config(args, theta_dim: int) -> FitConfig:
    if args.threads == "auto":
        budget = default_budget(theta_dim)
    else:
        budget = parse_budget(args.threads)
    theta0 = None
    if args.theta0:
        theta0 = np.array([float(v) for v in args.theta0.split(",")])
        if theta0.shape[0] != theta_dim:
            raise ConfigError("theta0", f"expected {theta_dim} values")
    return FitConfig(
        budget=budget,
        strategy=args.strategy,
        fd=FDConfig(scheme=args.diff, epsilon=args.fd_eps),
        line_search=LineSearchConfig(parallel=(args.linesearch == "parallel")),
        theta0=theta0,
        max_iterations=args.max_iters,
    )


def _write_fit_outputs(out_dir: Path, result: FitResult):
    out_dir.mkdir(parents=True, exist_ok=True)
    write_marginals_csv(out_dir / "marginals.csv", result.marginals)
    write_hyper_json(
        out_dir / "hyper.json",
        result.marginals,
        meta={"budget": str(result.budget), "status": result.optimization.status},
    )
    with open(out_dir / "trace.jsonl", "w") as fh:
        for entry in result.optimization.trace:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    (out_dir / "summary.json").write_text(
        json.dumps(result.summary(), indent=2, sort_keys=True) + "\n"
    )


def cmd_fit(args) -> int:
    spec, y = load_model(args.model, args.data)
    cfg = _fit_config(args, spec.theta_dim)
    result = fit(spec, y, cfg)
    _write_fit_outputs(Path(args.out), result)
    print(json.dumps(result.summary(), sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    spec, y = load_model(args.model, args.data)
    budgets = [b.strip() for b in args.sweep.split(",") if b.strip()]
    if not budgets:
        raise ConfigError("sweep", "empty budget sweep")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for text in budgets:
        cfg = _fit_config(args, spec.theta_dim)
        cfg.budget = parse_budget(text)
        row = {"budget": text, "time_per_fn": "", "speedup_vs_1:1": "", "status": ""}
        try:
            t0 = time.perf_counter()
            result = fit(spec, y, cfg)
            row["time_per_fn"] = result.time_per_fn_s
            row["status"] = result.optimization.status
            row["total_s"] = time.perf_counter() - t0
        except ParinlaError as exc:
            row["status"] = f"error: {exc}"
        rows.append(row)
    reference = None
    for row in rows:
        if row["budget"] == "1:1" and row["time_per_fn"] != "":
            reference = row["time_per_fn"]
            break
    if reference is None:
        for row in rows:
            if row["time_per_fn"] != "":
                reference = row["time_per_fn"]
                break
    for row in rows:
        if row["time_per_fn"] != "" and reference:
            row["speedup_vs_1:1"] = reference / row["time_per_fn"]
    with open(out_dir / "bench.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["budget", "time_per_fn", "speedup_vs_1:1", "status", "total_s"]
        )
        writer.writeheader()
        for row in rows:
            row.setdefault("total_s", "")
            writer.writerow(row)
    print((out_dir / "bench.csv").read_text(), end="")
    return 0


def cmd_synth(args) -> int:
    kw = {"seed": args.seed}
    if args.size is not None:
        kw["size"] = args.size
    if args.m is not None:
        kw["m"] = args.m
    bundle = make_synth(args.kind, **kw)
    paths = write_synth(args.out, bundle)
    print(json.dumps(paths, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parinla",
        description="Approximate Bayesian inference for latent Gaussian models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="run inference and write marginals")
    _add_fit_args(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_bench = sub.add_parser("bench", help="sweep thread budgets")
    _add_fit_args(p_bench)
    p_bench.add_argument("--sweep", required=True, help='comma list of budgets, e.g. "1:1,4:1"')
    p_bench.set_defaults(func=cmd_bench)

    p_synth = sub.add_parser("synth", help="generate a synthetic model and data")
    p_synth.add_argument("--kind", choices=KINDS, required=True)
    p_synth.add_argument("--size", type=int, default=None, help="latent size parameter")
    p_synth.add_argument("--m", type=int, default=None, help="observation count")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", default=".", help="output directory")
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(
            json.dumps({"error": "config", "key": exc.key, "message": str(exc)}),
            file=sys.stderr,
        )
        return 2
    except ParinlaError as exc:
        print(
            json.dumps({"error": "pipeline", "type": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
