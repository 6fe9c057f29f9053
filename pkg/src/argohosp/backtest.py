"""Rolling weekly retraining, 1-14 day forecasts, weekly aggregation and baselines."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core_data import HOSP, REGIONS, DataBundle, DataError, region_id
from .design import MAX_HORIZON, InsufficientHistory, build_design, dump_design
from .preprocess import LagTable, TermSelection
from .solver import decay_weights, fit_cv, predict

log = logging.getLogger(__name__)

METHODS = ("ARGO", "Naive", "AR7")
AR_ORDER = 7
RIDGE_JITTER = 1e-8


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-7
    max_iter: int = 10000
    grid_size: int = 50
    cv_mode: str = "blocked"
    folds: int = 10
    seed: int = 0


@dataclass(frozen=True)
class BacktestConfig:
    start: dt.date
    end: dt.date
    regions: tuple[str, ...] = ("US",)
    methods: tuple[str, ...] = METHODS
    window: int = 56
    omega: float = 0.8
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    lambda_policy: str = "per_fit"
    clip: bool = True
    audit_dir: str | None = None

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"backtest start {self.start} is after end {self.end}")
        start = self.start + dt.timedelta(days=(7 - self.start.weekday()) % 7)
        end = self.end - dt.timedelta(days=self.end.weekday())
        if (start, end) != (self.start, self.end):
            log.warning("backtest range %s..%s moved onto Mondays %s..%s", self.start, self.end, start, end)
        if start > end:
            raise ValueError(f"no Monday between {self.start} and {self.end}")
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", end)
        object.__setattr__(self, "regions", tuple(region_id(r) for r in self.regions))
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if self.lambda_policy not in ("per_fit", "frozen"):
            raise ValueError(f"unknown lambda policy {self.lambda_policy!r}")

    @property
    def issue_dates(self) -> list[dt.date]:
        n = (self.end - self.start).days // 7 + 1
        return [self.start + dt.timedelta(weeks=k) for k in range(n)]


@dataclass(frozen=True)
class ForecastRecord:
    method: str
    region: str
    issue_date: dt.date
    daily: tuple[float, ...]
    week1: float
    week2: float

    @classmethod
    def from_daily(cls, method, region, issue_date, daily, clip=True) -> "ForecastRecord":
        daily = np.asarray(daily, dtype=float)
        if clip:
            daily = np.maximum(daily, 0.0)
        w1, w2 = aggregate_weekly(daily)
        return cls(method, region_id(region), issue_date, tuple(float(v) for v in daily), w1, w2)

    @property
    def sort_key(self):
        return (self.issue_date, REGIONS.index(self.region), self.method)


def aggregate_weekly(daily) -> tuple[float, float]:
    daily = np.asarray(daily, dtype=float)
    if daily.shape != (MAX_HORIZON,):
        raise ValueError(f"expected {MAX_HORIZON} daily values, got {daily.shape}")
    return float(daily[:7].sum()), float(daily[7:].sum())


def _history_start(bundle: DataBundle, region: str, T: dt.date, days: int) -> int:
    iT = bundle.index_of(T)
    if iT >= bundle.n_days:
        raise InsufficientHistory(f"issue date {T} is after the bundle end {bundle.end}")
    if iT - days + 1 < 0:
        raise InsufficientHistory(f"{region} at {T}: needs {days} days of history, bundle starts {bundle.start}")
    return iT


def naive_forecast(bundle: DataBundle, region: str, T: dt.date) -> ForecastRecord:
    """Repeat the week ending on ``T`` for both forecast weeks."""
    iT = _history_start(bundle, region, T, 7)
    last = bundle.array(region, HOSP)[iT - 6:iT + 1]
    return ForecastRecord.from_daily("Naive", region, T, np.tile(last, 2))


def ar7_forecast(bundle: DataBundle, region: str, T: dt.date, M: int = 56) -> ForecastRecord:
    """Least-squares AR(7) with intercept on the trailing ``M`` days, iterated 14 steps."""
    iT = _history_start(bundle, region, T, M + AR_ORDER)
    y = bundle.array(region, HOSP)[iT - M - AR_ORDER + 1:iT + 1]
    Z = np.column_stack([np.ones(M)] + [y[AR_ORDER - i:AR_ORDER - i + M] for i in range(1, AR_ORDER + 1)])
    target = y[AR_ORDER:]
    theta, _, rank, _ = np.linalg.lstsq(Z, target, rcond=None)
    if rank < Z.shape[1]:
        log.warning("AR7 normal equations singular for %s at %s; using ridge jitter", region, T)
        theta = np.linalg.solve(Z.T @ Z + RIDGE_JITTER * np.eye(Z.shape[1]), Z.T @ target)
    hist = list(y[-AR_ORDER:])
    out = []
    for _ in range(MAX_HORIZON):
        nxt = theta[0] + sum(theta[i] * hist[-i] for i in range(1, AR_ORDER + 1))
        out.append(nxt)
        hist.append(nxt)
    return ForecastRecord.from_daily("AR7", region, T, out)


@dataclass(frozen=True)
class FitDiagnostic:
    issue_date: dt.date
    region: str
    horizon: int
    lam: float
    nnz: int
    converged: bool


def _cv_seed(cfg: BacktestConfig, T: dt.date, region: str, l: int) -> int:
    seq = np.random.SeedSequence([cfg.solver.seed, T.toordinal(), REGIONS.index(region), l])
    return int(seq.generate_state(1)[0])


def argo_forecast(bundle: DataBundle, region: str, T: dt.date, terms: TermSelection, lags: LagTable,
                  cfg: BacktestConfig, lams: dict | None = None):
    """One direct model per horizon; returns the record and per-horizon diagnostics.

    Targets are divided by their weighted sd before fitting so the solver
    tolerance is relative; predictions are scaled back.
    """
    w = decay_weights(cfg.window, cfg.omega)
    wbar = w / w.sum()
    sc = cfg.solver
    daily, diags = [], []
    for l in range(1, MAX_HORIZON + 1):
        d = build_design(bundle, region, l, T, terms, lags, cfg.window)
        dev = d.target - wbar @ d.target
        s = float(np.sqrt(wbar @ (dev * dev))) or 1.0
        fixed = None
        if lams is not None and (region, l) in lams:
            fixed = lams[(region, l)] / s
        fit = fit_cv(d.rows, d.target / s, w, sc.grid_size, sc.folds, _cv_seed(cfg, T, region, l),
                     sc.cv_mode, sc.tol, sc.max_iter, lam=fixed)
        daily.append(s * predict(fit, d.prediction_row))
        if cfg.audit_dir:
            _audit(Path(cfg.audit_dir), d, fit, s)
        diags.append(FitDiagnostic(T, region, l, fit.lam * s, fit.nnz, fit.converged))
    return ForecastRecord.from_daily("ARGO", region, T, daily, cfg.clip), diags


def _audit(root: Path, d, fit, scale: float) -> None:
    """Design CSV and fit JSON (coefficients on the target's scale) for one fit."""
    root.mkdir(parents=True, exist_ok=True)
    stem = f"{d.issue_date.isoformat()}_{d.region}_h{d.horizon:02d}"
    dump_design(d, root / f"{stem}_design.csv")
    rescaled = replace(fit, intercept=fit.intercept * scale, coefficients=fit.coefficients * scale,
                       lam=fit.lam * scale)
    (root / f"{stem}_fit.json").write_text(rescaled.to_json(groups=d.groups) + "\n")


def forecast_issue_date(bundle: DataBundle, T: dt.date, cfg: BacktestConfig, terms: TermSelection,
                        lags: LagTable, lams: dict | None = None):
    """All records for one issue date, computed from data dated on or before ``T`` only."""
    view = bundle.truncate(T)
    if view.end != T:
        raise InsufficientHistory(f"bundle ends {bundle.end}, before issue date {T}")
    records, diags = [], []
    for region in cfg.regions:
        if "ARGO" in cfg.methods:
            rec, dg = argo_forecast(view, region, T, terms, lags, cfg, lams)
            records.append(rec)
            diags.extend(dg)
        if "Naive" in cfg.methods:
            records.append(naive_forecast(view, region, T))
        if "AR7" in cfg.methods:
            records.append(ar7_forecast(view, region, T, cfg.window))
    return sorted(records, key=lambda r: r.sort_key), diags


def _task(args):
    return forecast_issue_date(*args)


def run_backtest(bundle: DataBundle, cfg: BacktestConfig, terms: TermSelection, lags: LagTable,
                 jobs: int = 1, checkpoint=None, diagnostics: list | None = None) -> list[ForecastRecord]:
    """Forecast every (Monday, region, method) in the configured range.

    Each issue date is computed as a unit. With ``checkpoint`` set, finished
    dates are listed in that JSON file and their records kept next to it, so
    an interrupted run resumes where it stopped.
    """
    dates = cfg.issue_dates
    done: dict[dt.date, list[ForecastRecord]] = {}
    ck = Path(checkpoint) if checkpoint is not None else None
    if ck is not None and ck.exists():
        finished = {dt.date.fromisoformat(d) for d in json.loads(ck.read_text())}
        store = _records_path(ck)
        prior = read_daily(store) if store.exists() else []
        for rec in prior:
            if rec.issue_date in finished:
                done.setdefault(rec.issue_date, []).append(rec)
        log.info("resuming: %d issue dates already complete", len(done))

    lams = None
    todo = [T for T in dates if T not in done]
    if cfg.lambda_policy == "frozen" and "ARGO" in cfg.methods:
        first_recs, first_diags = forecast_issue_date(bundle, dates[0], cfg, terms, lags)
        lams = {(d.region, d.horizon): d.lam for d in first_diags}
        if dates[0] in todo:
            _finish(done, ck, dates[0], first_recs, first_diags, diagnostics)
            todo.remove(dates[0])

    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = pool.map(_task, [(bundle, T, cfg, terms, lags, lams) for T in todo])
            for T, (recs, dg) in zip(todo, results):
                _finish(done, ck, T, recs, dg, diagnostics)
    else:
        for T in todo:
            recs, dg = forecast_issue_date(bundle, T, cfg, terms, lags, lams)
            _finish(done, ck, T, recs, dg, diagnostics)
    out = [r for T in sorted(done) for r in done[T]]
    return sorted(out, key=lambda r: r.sort_key)


def _records_path(ck: Path) -> Path:
    return ck.with_name(ck.name + ".records.csv")


def _finish(done, ck, T, recs, diags, diagnostics):
    done[T] = recs
    if diagnostics is not None:
        diagnostics.extend(diags)
    if ck is None:
        return
    all_recs = [r for d in sorted(done) for r in done[d]]
    tmp = _records_path(ck).with_suffix(".tmp")
    write_daily(all_recs, tmp)
    os.replace(tmp, _records_path(ck))
    ck_tmp = ck.with_suffix(".tmp")
    ck_tmp.write_text(json.dumps([d.isoformat() for d in sorted(done)]))
    os.replace(ck_tmp, ck)


WEEKLY_FIELDS = ["method", "region", "issue_date", "target_week_start", "horizon_weeks", "value"]
DAILY_FIELDS = ["method", "region", "issue_date", "horizon_days", "target_date", "value"]


@dataclass(frozen=True)
class WeeklyForecast:
    method: str
    region: str
    issue_date: dt.date
    target_week_start: dt.date
    horizon_weeks: int
    value: float


def weekly_rows(records) -> list[WeeklyForecast]:
    out = []
    for r in sorted(records, key=lambda r: r.sort_key):
        out.append(WeeklyForecast(r.method, r.region, r.issue_date, r.issue_date + dt.timedelta(days=1), 1, r.week1))
        out.append(WeeklyForecast(r.method, r.region, r.issue_date, r.issue_date + dt.timedelta(days=8), 2, r.week2))
    return out


def write_forecasts(records, path) -> None:
    """Weekly wire format, one row per weekly aggregate."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(WEEKLY_FIELDS)
        for row in weekly_rows(records):
            w.writerow([row.method, row.region, row.issue_date.isoformat(), row.target_week_start.isoformat(),
                        row.horizon_weeks, repr(float(row.value))])


def read_forecasts(path) -> list[WeeklyForecast]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(WEEKLY_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            out.append(WeeklyForecast(
                row["method"], region_id(row["region"]), dt.date.fromisoformat(row["issue_date"]),
                dt.date.fromisoformat(row["target_week_start"]), int(row["horizon_weeks"]), float(row["value"])))
    return out


def write_daily(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DAILY_FIELDS)
        for r in sorted(records, key=lambda r: r.sort_key):
            for h, v in enumerate(r.daily, start=1):
                w.writerow([r.method, r.region, r.issue_date.isoformat(), h,
                            (r.issue_date + dt.timedelta(days=h)).isoformat(), repr(float(v))])


def read_daily(path) -> list[ForecastRecord]:
    groups: dict[tuple, dict[int, float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["method"], row["region"], dt.date.fromisoformat(row["issue_date"]))
            groups.setdefault(key, {})[int(row["horizon_days"])] = float(row["value"])
    out = []
    for (method, region, T), vals in groups.items():
        if sorted(vals) != list(range(1, MAX_HORIZON + 1)):
            raise DataError(f"{path}: incomplete daily record for {method} {region} {T}")
        out.append(ForecastRecord.from_daily(method, region, T, [vals[h] for h in range(1, MAX_HORIZON + 1)],
                                             clip=False))
    return sorted(out, key=lambda r: r.sort_key)


def with_methods(cfg: BacktestConfig, methods) -> BacktestConfig:
    return replace(cfg, methods=tuple(methods))
