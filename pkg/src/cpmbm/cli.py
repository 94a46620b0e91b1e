"""Command-line interface: ``cpmbm run`` and ``cpmbm compare``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys

import yaml

from .experiment import (COMPARE_FIELDS, VARIANTS, compare_table, load_reports, run_variant, worker_count,
                         write_reports)
from .scenario import ScenarioConfig


def _parse_override(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), yaml.safe_load(value)


def build_config(args) -> ScenarioConfig:
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ValueError("configuration file must hold a mapping")
    for flag, key in (("scenario", "scenario"), ("n_sim", "n_sim"), ("seed", "seed"), ("steps", "steps")):
        value = getattr(args, flag)
        if value is not None:
            data[key] = value
    data.setdefault("scenario", 1)
    data.setdefault("n_sim", 1)
    for key, value in args.overrides:
        if "." in key:
            outer, inner = key.split(".", 1)
            data.setdefault(outer, {})[inner] = value
        else:
            data[key] = value
    return ScenarioConfig.from_dict(data)


def cmd_run(args) -> int:
    try:
        cfg = build_config(args)
        variants = [v.strip() for v in args.filters.split(",") if v.strip()]
        unknown = [v for v in variants if v not in VARIANTS]
        if unknown:
            raise ValueError(f"unknown filter variants {unknown}; choose from {sorted(VARIANTS)}")
        if args.mc < 1:
            raise ValueError("--mc must be at least 1")
    except (ValueError, TypeError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    workers = worker_count(args.workers)
    reports = []
    for v in variants:
        logging.info("running %s (%d runs, %d workers)", v, args.mc, workers)
        reports.append(run_variant(cfg, v, args.mc, workers, timing=not args.no_timing))
    summaries = write_reports(reports, args.out)
    for v, s in summaries.items():
        rms = s.get("rms_gospa")
        text = "all runs failed" if rms is None else f"RMS GOSPA {rms:.3f}, {s['time_s_per_run']:.2f} s/run"
        print(f"{v}: {text}")
    return 0


def cmd_compare(args) -> int:
    try:
        reports = load_reports(args.reports)
        if len(reports) < 2:
            raise ValueError("compare needs at least two reports")
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    rows = compare_table(reports)
    if args.csv:
        w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return 0
    width = max(len(r["variant"]) for r in rows) + 2
    header = "variant".ljust(width) + "".join(f"{f:>24}" for f in COMPARE_FIELDS)
    print(header)
    for r in rows:
        cells = "".join(f"{r[f]:>12.4g} ({r['delta_' + f]:+9.3g})" for f in COMPARE_FIELDS)
        print(r["variant"].ljust(width) + cells)
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpmbm", description="Clustered PMBM tracking benchmarks.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run Monte Carlo simulations and write per-variant reports")
    r.add_argument("--config", help="YAML scenario configuration")
    r.add_argument("--scenario", type=int, choices=(1, 2))
    r.add_argument("--n-sim", dest="n_sim", type=int, choices=(1, 2, 3, 4))
    r.add_argument("--mc", type=int, default=1, help="number of Monte Carlo runs")
    r.add_argument("--filters", default="clustered-pmbm",
                   help="comma-separated variants: " + ", ".join(VARIANTS))
    r.add_argument("--seed", type=int)
    r.add_argument("--steps", type=int)
    r.add_argument("--out", default="results", help="output directory")
    r.add_argument("--workers", type=int, help="parallel Monte Carlo workers")
    r.add_argument("--no-timing", action="store_true", help="write zero wall times (byte-stable output)")
    r.add_argument("--set", dest="overrides", action="append", default=[], type=_parse_override,
                   metavar="KEY=VALUE", help="override a configuration key, e.g. thresholds.gamma_m=0.5")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="compare run reports side by side")
    c.add_argument("reports", nargs="+", help="variant JSON reports or summary.json files")
    c.add_argument("--csv", action="store_true", help="machine-readable output")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = make_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
