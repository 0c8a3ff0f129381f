"""Command line entry point: ``ssep run | trial | validate | tables``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time

import numpy as np

from . import experiment as ex
from .pc_ep import run_pcep
from .r_ep import run_rep


def _config(args) -> ex.ExperimentConfig:
    return ex.load_config(args.config) if args.config else ex.ExperimentConfig()


def cmd_run(args) -> int:
    config = _config(args)
    os.makedirs(args.out, exist_ok=True)
    start = time.perf_counter()

    def progress(done, total):
        if not args.quiet:
            print(f"\rtrial {done}/{total}  {time.perf_counter() - start:7.1f}s", end="", file=sys.stderr, flush=True)

    records, tables = ex.run_sweep(config, progress)
    if not args.quiet:
        print(file=sys.stderr)
    rows = ex.to_rows(records)
    csv_path = os.path.join(args.out, "results.csv")
    md_path = os.path.join(args.out, "tables.md")
    ex.write_csv(csv_path, rows)
    with open(md_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(ex.tables_markdown(tables))
    print(f"wrote {csv_path} and {md_path}")
    return 0


def cmd_trial(args) -> int:
    config = _config(args)
    config = dataclasses.replace(config, seed=args.seed)
    model, test_X, test_y, true_w = ex.generate_trial(config, args.trial)
    rep = run_rep(model, damping=args.tau, max_iter=config.rep_max_iter, tol=config.rep_tol, eps=config.eps)
    pcep = run_pcep(model, eps=config.eps, outer_tol=config.outer_tol, max_outer=config.max_outer,
                    inner_tol=config.inner_tol, inner_max_iters=config.inner_max_iters)
    print(f"# seed={args.seed} trial={args.trial} tau={args.tau:g} d={model.d} n={model.n} "
          f"nonzero={int(np.count_nonzero(true_w))}")
    print("method,iteration,energy")
    for i, e in enumerate(rep.energy_trace, 1):
        print(f"rep,{i},{e!r}")
    for i, e in enumerate(pcep.energy_trace):
        print(f"pcep,{i},{e!r}")
    for name, res in (("rep", rep), ("pcep", pcep)):
        mse = ex.evaluate_mse(res.mean, test_X, test_y)
        print(f"# {name}: converged={res.converged} iterations={res.iterations} mse={mse:.6g}")
    return 0


def cmd_validate(args) -> int:
    from .validate import run_checks

    results = run_checks(seed=args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def cmd_tables(args) -> int:
    rows = ex.read_csv(args.infile)
    tables = ex.summarize(rows)
    text = ex.tables_markdown(tables) if args.format == "md" else ex.tables_csv(tables)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssep", description="EP for spike-and-slab linear regression")
    p.add_argument("-v", "--verbose", action="store_true", help="log warnings from failed runs")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="full damping sweep; writes results.csv and tables.md")
    r.add_argument("--config", help="key = value config file (defaults if omitted)")
    r.add_argument("--out", default=".", help="output directory (default: current)")
    r.add_argument("-q", "--quiet", action="store_true", help="no progress line")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("trial", help="one trial; prints the energy traces of both methods")
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--trial", type=int, required=True)
    t.add_argument("--tau", type=float, required=True, help="R-EP damping")
    t.add_argument("--config", help="config file for the remaining settings")
    t.set_defaults(func=cmd_trial)

    v = sub.add_parser("validate", help="oracle and invariant checks at small d")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("tables", help="summary tables from a results file")
    s.add_argument("--in", dest="infile", required=True)
    s.add_argument("--format", choices=("md", "csv"), default="md")
    s.set_defaults(func=cmd_tables)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "tau", None) is not None and not 0.0 < args.tau <= 1.0:
        print("error: --tau must lie in (0, 1]", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
