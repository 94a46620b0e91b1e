"""Monte Carlo experiment runner behind the command-line interface."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .filter import PmbmFilter
from .metrics import gospa, positions
from .scenario import ScenarioConfig, filter_birth_model, gen_measurements, gen_truth, rng

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CSV_COLUMNS = ("step", "gospa", "gospa_loc", "gospa_missed", "gospa_false", "n_clusters",
               "mean_tracks_per_cluster", "n_gh_before", "n_gh_after", "wall_ms")
WORKERS_ENV = "CPMBM_WORKERS"

# variant name -> (clustered, mode, merge, swap)
VARIANTS = {
    "standard-pmbm": (False, "pmbm", False, False),
    "clustered-pmbm": (True, "pmbm", False, False),
    "clustered-pmbm-merge": (True, "pmbm", True, False),
    "clustered-pmbm-merge-swap": (True, "pmbm", True, True),
    "standard-pmb": (False, "pmb", False, False),
    "clustered-pmb": (True, "pmb", False, False),
}


def variant_config(cfg: ScenarioConfig, variant: str) -> ScenarioConfig:
    try:
        clustered, mode, merge, swap = VARIANTS[variant]
    except KeyError:
        raise ValueError(f"unknown filter variant {variant!r}; choose from {sorted(VARIANTS)}") from None
    return dataclasses.replace(cfg, filter={"mode": mode, "clustered": clustered},
                               reduction={"merge": merge, "swap": swap})


def run_once(cfg: ScenarioConfig, run: int) -> np.ndarray:
    """One Monte Carlo run; returns an array with one row per step in ``CSV_COLUMNS`` order."""
    truth = gen_truth(cfg, run)
    model = cfg.measurement_model()
    scans = gen_measurements(truth, model, cfg.d_a, rng(cfg.seed, run, 1))
    filt = PmbmFilter(cfg.motion_model(), model, filter_birth_model(cfg), cfg.filter_params())
    rows = np.zeros((cfg.steps, len(CSV_COLUMNS)))
    for k, Z in enumerate(scans, start=1):
        stats = filt.step(Z)
        g = gospa(positions(truth.alive_at(k)), positions(filt.estimate()))
        rows[k - 1] = (k, g.total, g.localization, g.missed, g.false_, stats.n_clusters,
                       stats.mean_tracks_per_cluster, stats.n_gh_before, stats.n_gh_after, stats.wall_ms)
    return rows


def _run_job(args):
    cfg, run = args
    try:
        return run, run_once(cfg, run), None
    except Exception as exc:  # a failed run is recorded and the batch continues
        return run, None, f"{type(exc).__name__}: {exc}"


@dataclass
class RunReport:
    variant: str
    config: dict
    runs: dict = field(default_factory=dict)  # run index -> per-step array
    failures: dict = field(default_factory=dict)  # run index -> error message

    def per_scan(self) -> np.ndarray:
        """Per-step rows aggregated over runs: RMS for gospa, mean for everything else."""
        if not self.runs:
            return np.zeros((0, len(CSV_COLUMNS)))
        stack = np.stack([self.runs[r] for r in sorted(self.runs)])
        out = stack.mean(axis=0)
        out[:, 1] = np.sqrt((stack[:, :, 1] ** 2).mean(axis=0))
        return out

    def summary(self) -> dict:
        ok = sorted(self.runs)
        base = {"schema_version": SCHEMA_VERSION, "variant": self.variant, "config": self.config,
                "mc_runs": len(ok) + len(self.failures), "failed_runs": {str(k): v for k, v in self.failures.items()}}
        if not ok:
            return base
        stack = np.stack([self.runs[r] for r in ok])
        totals = stack[:, :, 1]
        base.update({
            "rms_gospa": math.sqrt(float((totals**2).mean())),
            "rms_gospa_per_run": [math.sqrt(float((t**2).mean())) for t in totals],
            "mean_gospa_loc": float(stack[:, :, 2].mean()),
            "mean_gospa_missed": float(stack[:, :, 3].mean()),
            "mean_gospa_false": float(stack[:, :, 4].mean()),
            "mean_clusters": float(stack[:, :, 5].mean()),
            "mean_tracks_per_cluster": float(stack[:, :, 6].mean()),
            "mean_n_gh_before": float(stack[:, :, 7].mean()),
            "mean_n_gh_after": float(stack[:, :, 8].mean()),
            "time_s_per_run": float(stack[:, :, 9].sum(axis=1).mean() / 1000.0),
        })
        return base

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for row in self.per_scan():
                w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def worker_count(requested: int | None = None) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return max(1, requested or 1)


def run_variant(cfg: ScenarioConfig, variant: str, mc: int, workers: int = 1, timing: bool = True) -> RunReport:
    vcfg = variant_config(cfg, variant)
    report = RunReport(variant, vcfg.to_dict())
    jobs = [(vcfg, run) for run in range(mc)]
    if workers > 1 and mc > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    for run, rows, err in results:
        if err is not None:
            log.warning("run %d of %s failed: %s", run, variant, err)
            report.failures[run] = err
            continue
        if not timing:
            rows[:, 9] = 0.0
        report.runs[run] = rows
    return report


def write_reports(reports: list[RunReport], out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summaries = {}
    for rep in reports:
        rep.write_csv(out / f"{rep.variant}.csv")
        s = rep.summary()
        (out / f"{rep.variant}.json").write_text(json.dumps(s, indent=2, sort_keys=True) + "\n")
        summaries[rep.variant] = s
    (out / "summary.json").write_text(json.dumps(summaries, indent=2, sort_keys=True) + "\n")
    return summaries


COMPARE_FIELDS = ("rms_gospa", "mean_gospa_loc", "mean_gospa_missed", "mean_gospa_false", "time_s_per_run",
                  "mean_clusters", "mean_tracks_per_cluster", "mean_n_gh_before", "mean_n_gh_after")


def load_reports(paths) -> list[dict]:
    """Variant summaries from report files (a variant JSON or a summary.json holding several)."""
    out = []
    for p in paths:
        data = json.loads(Path(p).read_text())
        entries = [data] if "variant" in data else list(data.values())
        for e in entries:
            if not isinstance(e, dict) or e.get("schema_version") != SCHEMA_VERSION:
                raise ValueError(f"{p}: not a report of schema version {SCHEMA_VERSION}")
            missing = [f for f in COMPARE_FIELDS if f not in e]
            if missing:
                raise ValueError(f"{p}: report lacks fields {missing}")
            out.append(e)
    return out


def compare_table(reports: list[dict]) -> list[dict]:
    """One row per report with its fields and the difference to the first report."""
    ref = reports[0]
    rows = []
    for rep in reports:
        row = {"variant": rep["variant"]}
        for f in COMPARE_FIELDS:
            row[f] = rep[f]
            row[f"delta_{f}"] = rep[f] - ref[f]
        rows.append(row)
    return rows
