"""Command-line entry point: ``powerrl {run,sweep,check,oracle} CONFIG``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .checks import format_table, oracle_report, run_checks
from .config import ConfigError, load_config
from .harness import run_experiment, sweep


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="powerrl", description="POWER / POWER++ experiments on tabular MDPs")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("config", type=Path)
        if out:
            sp.add_argument("--out", type=Path, default=None, help="output directory (default: out.dir)")
            sp.add_argument("--workers", type=int, default=1)
            sp.add_argument("--record-time", action="store_true",
                            help="fill the wall_time column (output is then no longer byte-reproducible)")
        sp.add_argument("--seed-offset", type=int, default=0)

    common(sub.add_parser("run", help="run every seed of a config and write CSV results"))
    sp = sub.add_parser("sweep", help="run a config once per value of one numeric key")
    common(sp)
    sp.add_argument("--axis", required=True)
    sp.add_argument("--values", required=True, help="comma-separated values")
    common(sub.add_parser("check", help="run the invariant suite and print a pass/fail table"), out=False)
    common(sub.add_parser("oracle", help="print realized P_T / D_T and per-episode optimal values"), out=False)
    return p


def _print_summary(summary) -> None:
    for metric, mean, se, n in summary:
        tail = "" if se is None else f" +/- {se:.6g}"
        print(f"{metric:32s} {mean:.6g}{tail}  (n={n})")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return 2

    if args.command == "check":
        results = run_checks(cfg, args.seed_offset)
        print(format_table(results))
        return 0 if all(r.ok for r in results) else 1
    if args.command == "oracle":
        sys.stdout.write(oracle_report(cfg, args.seed_offset))
        return 0

    out = args.out or Path(cfg["out.dir"])
    if args.command == "run":
        res = run_experiment(cfg, out, args.workers, args.seed_offset, args.record_time)
        _print_summary(res.summary)
        ok = res.ok
    else:
        try:
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            res = sweep(cfg, args.axis, values, out, args.workers, args.seed_offset, args.record_time)
        except ConfigError as exc:
            print(f"sweep: {exc}", file=sys.stderr)
            return 2
        for value, r in zip(res.values, res.results):
            print(f"{args.axis} = {value}")
            _print_summary(r.summary)
        if res.slope is not None:
            print(f"log-log slope of final dynamic regret vs T: {res.slope:.4f}")
        ok = all(r.ok for r in res.results)
    if not ok:
        print("invariant failure: bonus-sum bound or decomposition residual (see diagnostics.csv)", file=sys.stderr)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
