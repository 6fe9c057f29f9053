"""Command-line entry point: ``argohosp {validate,prepare,backtest,report} CONFIG``.

Each stage reads the JSON configuration and writes into the output
directory, so term selection can be inspected before any model is fitted.
Exit codes: 0 success, 1 invalid configuration, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .backtest import read_forecasts, run_backtest, write_daily, write_forecasts
from .config import REQUIRED_DATA, ConfigError, RunConfig, load_config, violations
from .core_data import CASES, HOSP, VACC, DataBundle, DataError, Kind, Variable, align_bundle, load_adjacency, load_series
from .design import MAX_HORIZON, build_design
from .evaluate import filter_external, render_report, score, weekly_truth
from .preprocess import clean_query, prepare_terms, read_selection, write_lags, write_selection

log = logging.getLogger("argohosp")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
TERMS_FILE, LAGS_FILE = "terms.csv", "lags.csv"
FORECASTS_FILE, DAILY_FILE = "forecasts.csv", "forecasts_daily.csv"
METADATA_FILE, FITS_FILE = "run_metadata.json", "fits.csv"
REPORT_DIR = "report"

_VARIABLES = {"hospitalizations": HOSP, "cases": CASES, "vaccination": VACC, "queries": Variable.query("*")}


class InvalidConfig(Exception):
    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_raw_series(cfg: RunConfig) -> list:
    series = []
    for key in REQUIRED_DATA:
        layout = "wide" if key == "queries" else cfg.layouts[key]
        series += load_series(cfg.data[key], _VARIABLES[key], layout)
    return series


def _bundle(series, cfg: RunConfig) -> DataBundle:
    """Align on the span every series covers."""
    start = max(s.start_date for s in series)
    end = min(s.end_date for s in series)
    return align_bundle(series, load_adjacency(cfg.adjacency), start, end)


def raw_bundle(cfg: RunConfig) -> DataBundle:
    return _bundle(load_raw_series(cfg), cfg)


def model_bundle(cfg: RunConfig, terms) -> DataBundle:
    """Bundle fed to the regression: selected queries filtered and smoothed, others dropped."""
    series = []
    for s in load_raw_series(cfg):
        if s.variable.kind is not Kind.QUERY_TERM:
            series.append(s)
        elif s.variable.term in terms:
            series.append(clean_query(s))
    missing = set(terms) - {s.variable.term for s in series if s.variable.term}
    if missing:
        raise DataError(f"selected terms absent from {cfg.data['queries']}: {sorted(missing)}")
    return _bundle(series, cfg)


def _checked(path) -> RunConfig:
    cfg = load_config(path)
    problems = violations(cfg)
    if problems:
        raise InvalidConfig(problems)
    return cfg


def cmd_validate(path) -> list[str]:
    """All violations found; an empty list means the configuration is usable."""
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        return [str(exc)]
    problems = violations(cfg)
    if problems:
        return problems
    try:
        bundle = raw_bundle(cfg)
    except (DataError, FileNotFoundError) as exc:
        return [f"input data: {exc}"]
    bt = cfg.backtest
    for r in bt.regions:
        for need in [r, *sorted(bundle.adjacency[r])]:
            if not bundle.has(need, HOSP):
                problems.append(f"no hospitalizations for {need} (needed by {r})")
    if not bundle.start <= cfg.selection.start <= cfg.selection.end <= bundle.end:
        problems.append(f"selection window {cfg.selection.start}..{cfg.selection.end} "
                        f"outside the data span {bundle.start}..{bundle.end}")
    if bt.end > bundle.end:
        problems.append(f"backtest ends {bt.end}, after the data span ends {bundle.end}")
    terms_path = cfg.output_dir / TERMS_FILE
    if not problems and terms_path.exists():
        sel, lags = read_selection(terms_path)
        mbundle = model_bundle(cfg, sel.terms)
        for r in bt.regions:
            for l in range(1, MAX_HORIZON + 1):
                try:
                    build_design(mbundle, r, l, bt.start, sel, lags, bt.window)
                except DataError as exc:
                    problems.append(f"first issue date {bt.start}: {exc}")
                    break
    if bt.end + dt.timedelta(days=MAX_HORIZON) > bundle.end:
        log.warning("data end %s leaves the last forecast weeks without truth", bundle.end)
    return problems


def cmd_prepare(cfg: RunConfig) -> tuple[Path, Path]:
    series = load_raw_series(cfg)
    queries = [s for s in series if s.variable.kind is Kind.QUERY_TERM]
    ys = [s for s in series if s.variable == HOSP and s.region == "US"]
    if not ys:
        raise DataError("no national hospitalizations series")
    sel = cfg.selection
    rep = prepare_terms(queries, ys[0], sel.start, sel.end, sel.threshold, sel.k_max, sel.lag_min, sel.lag_max)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    terms_path, lags_path = cfg.output_dir / TERMS_FILE, cfg.output_dir / LAGS_FILE
    write_selection(rep.selection, rep.lags, terms_path)
    write_lags(rep.all_lags, rep.all_correlations, lags_path)
    log.info("selected %d terms: %s", len(rep.selection), ", ".join(rep.selection.terms))
    return terms_path, lags_path


def _read_terms(cfg: RunConfig):
    path = cfg.output_dir / TERMS_FILE
    if not path.exists():
        raise DataError(f"{path} not found; run 'prepare' first")
    return read_selection(path)


def run_metadata(cfg: RunConfig, fits) -> dict:
    bt = cfg.backtest
    return {
        "version": __version__,
        "config": cfg.echo(),
        "seed": {"backtest": bt.seed, "solver": bt.solver.seed},
        "flags": {"clip": bt.clip, "cv_mode": bt.solver.cv_mode, "lambda_policy": bt.lambda_policy,
                  "omega": bt.omega, "window": bt.window},
        "input_sha256": {str(p): sha256(p) for p in cfg.input_files},
        "selection_sha256": sha256(cfg.output_dir / TERMS_FILE),
        "issue_dates": [d.isoformat() for d in bt.issue_dates],
        "fits": {"total": len(fits), "unconverged": sum(not f.converged for f in fits)},
    }


def _write_fits(fits, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["issue_date", "region", "horizon_days", "lambda", "nnz", "converged"])
        for f in sorted(fits, key=lambda f: (f.issue_date, f.region, f.horizon)):
            w.writerow([f.issue_date.isoformat(), f.region, f.horizon, repr(f.lam), f.nnz, int(f.converged)])


def cmd_backtest(cfg: RunConfig, jobs: int | None = None) -> list[Path]:
    sel, lags = _read_terms(cfg)
    bundle = model_bundle(cfg, sel.terms)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    ck = out / ".checkpoint.json"
    fits = []
    records = run_backtest(bundle, cfg.backtest, sel, lags, jobs or os.cpu_count() or 1, ck, fits)
    paths = [out / FORECASTS_FILE, out / DAILY_FILE, out / FITS_FILE, out / METADATA_FILE]
    write_forecasts(records, paths[0])
    write_daily(records, paths[1])
    _write_fits(fits, paths[2])
    paths[3].write_text(json.dumps(run_metadata(cfg, fits), indent=2, sort_keys=True) + "\n")
    # a completed run leaves nothing to resume
    for p in (ck, ck.with_name(ck.name + ".records.csv")):
        p.unlink(missing_ok=True)
    if len(fits) and any(not f.converged for f in fits):
        log.warning("%d of %d fits hit the iteration cap", sum(not f.converged for f in fits), len(fits))
    return paths


def cmd_report(cfg: RunConfig, charts: bool = True) -> list[Path]:
    path = cfg.output_dir / FORECASTS_FILE
    if not path.exists():
        raise DataError(f"no forecast files found in {cfg.output_dir}; run 'backtest' first")
    rows = read_forecasts(path)
    bundle = raw_bundle(cfg)
    weeks = sorted({r.target_week_start for r in rows})
    regions = sorted({r.region for r in rows})
    truth = weekly_truth(bundle, regions, weeks)
    own = [r for r in rows if (r.region, r.target_week_start) in truth]
    if len(own) < len(rows):
        log.warning("%d forecast weeks lie past the data and are not scored", len(rows) - len(own))
    external = []
    for ext in cfg.external:
        kept, _ = filter_external(read_forecasts(ext), truth, cfg.backtest.issue_dates)
        external += kept
    metrics = score(own + external, truth)
    return render_report(metrics, cfg.output_dir / REPORT_DIR, own + external, truth, charts)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="argohosp", description="Hospitalization forecasts from search data.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in [("validate", "check a configuration and its input files"),
                       ("prepare", "select query terms and their lags"),
                       ("backtest", "rolling weekly forecasts for every configured method"),
                       ("report", "score forecasts and write tables and charts")]:
        sp = sub.add_parser(name, help=text)
        sp.add_argument("config", type=Path)
        if name == "backtest":
            sp.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
        if name == "report":
            sp.add_argument("--no-charts", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            problems = cmd_validate(args.config)
            for msg in problems:
                print(f"violation: {msg}")
            if not problems:
                print(f"{args.config}: ok")
            return EXIT_INVALID if problems else EXIT_OK
        cfg = _checked(args.config)
        if args.command == "prepare":
            written = cmd_prepare(cfg)
        elif args.command == "backtest":
            written = cmd_backtest(cfg, args.jobs)
        else:
            written = cmd_report(cfg, charts=not args.no_charts)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except InvalidConfig as exc:
        for msg in exc.problems:
            print(f"violation: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for p in written:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
