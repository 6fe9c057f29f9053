"""Error metrics on weekly aggregates and comparison reports."""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .backtest import ForecastRecord, WeeklyForecast, weekly_rows
from .core_data import HOSP, NATIONAL, REGIONS, DataBundle, DataError

log = logging.getLogger(__name__)

STATE_AVERAGE = "STATE_AVG"
METRIC_FIELDS = ["method", "region", "horizon_weeks", "rmse", "mae", "cor"]


class ZeroVariance(ValueError):
    pass


class MissingTruth(DataError):
    pass


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(truth))):
        raise ValueError("non-finite input")
    return pred, truth


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return math.sqrt(float(np.mean((pred - truth) ** 2)))


def mae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def pearson(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    if pred.size < 2:
        raise ValueError("need at least two points")
    dp = pred - pred.mean()
    dt_ = truth - truth.mean()
    sp, st = math.sqrt(dp @ dp), math.sqrt(dt_ @ dt_)
    if sp == 0 or st == 0:
        raise ZeroVariance("constant series")
    return float(np.clip((dp @ dt_) / (sp * st), -1.0, 1.0))


@dataclass(frozen=True)
class MetricRow:
    method: str
    region: str
    rmse_w1: float
    rmse_w2: float
    mae_w1: float
    mae_w2: float
    cor_w1: float
    cor_w2: float

    @property
    def mean_rmse(self) -> float:
        return (self.rmse_w1 + self.rmse_w2) / 2


def weekly_truth(bundle: DataBundle, regions: Iterable[str], week_starts: Iterable[dt.date]) -> dict:
    """Seven-day sums of hospitalizations keyed by ``(region, week_start)``; weeks past the data are skipped."""
    out = {}
    for region in regions:
        y = bundle.array(region, HOSP)
        for start in week_starts:
            i = bundle.index_of(start)
            if i >= 0 and i + 7 <= bundle.n_days:
                out[(region, start)] = float(y[i:i + 7].sum())
    return out


def _as_weekly(records) -> list[WeeklyForecast]:
    records = list(records)
    if records and isinstance(records[0], ForecastRecord):
        return weekly_rows(records)
    return records


def _cor(pred, truth, method, region, h):
    try:
        return pearson(pred, truth)
    except (ZeroVariance, ValueError):
        log.warning("correlation undefined for %s %s week %d; excluded", method, region, h)
        return float("nan")


def score(records, truth: Mapping[tuple[str, dt.date], float], average_states: bool = True) -> list[MetricRow]:
    """One MetricRow per (method, region), plus an unweighted state average per method."""
    cells = defaultdict(lambda: {1: ([], []), 2: ([], [])})
    missing = []
    for row in _as_weekly(records):
        key = (row.region, row.target_week_start)
        if key not in truth:
            missing.append(key)
            continue
        p, t = cells[(row.method, row.region)][row.horizon_weeks]
        p.append(row.value)
        t.append(truth[key])
    if missing:
        listed = ", ".join(f"{r} {d.isoformat()}" for r, d in sorted(set(missing))[:10])
        raise MissingTruth(f"no truth for {len(set(missing))} forecast week(s): {listed}")
    rows = []
    for (method, region), by_h in sorted(cells.items(), key=lambda kv: (kv[0][0], REGIONS.index(kv[0][1]))):
        vals = {}
        for h in (1, 2):
            p, t = by_h[h]
            if not p:
                vals[h] = (float("nan"),) * 3
                continue
            vals[h] = (rmse(p, t), mae(p, t), _cor(p, t, method, region, h))
        rows.append(MetricRow(method, region, vals[1][0], vals[2][0], vals[1][1], vals[2][1],
                              vals[1][2], vals[2][2]))
    if average_states:
        rows += state_averages(rows)
    return rows


def state_averages(rows: Iterable[MetricRow]) -> list[MetricRow]:
    by_method = defaultdict(list)
    for r in rows:
        if r.region not in (NATIONAL, STATE_AVERAGE):
            by_method[r.method].append(r)
    out = []
    for method in sorted(by_method):
        rs = by_method[method]

        def avg(attr):
            v = np.array([getattr(r, attr) for r in rs], dtype=float)
            v = v[~np.isnan(v)]
            return float(v.mean()) if v.size else float("nan")

        out.append(MetricRow(method, STATE_AVERAGE, *(avg(a) for a in
                   ("rmse_w1", "rmse_w2", "mae_w1", "mae_w2", "cor_w1", "cor_w2"))))
    return out


def filter_external(rows: Iterable[WeeklyForecast], truth: Mapping, issue_dates: Iterable[dt.date]):
    """Keep external forecasts that line up with an issue date and a truth week."""
    issue = set(issue_dates)
    kept, dropped = [], 0
    for r in rows:
        if r.issue_date in issue and (r.region, r.target_week_start) in truth:
            kept.append(r)
        else:
            dropped += 1
    if dropped:
        log.warning("excluded %d external forecast rows with mismatched dates", dropped)
    return kept, dropped


def write_metrics(rows: Iterable[MetricRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([r.method, r.region, 1, repr(r.rmse_w1), repr(r.mae_w1), repr(r.cor_w1)])
            w.writerow([r.method, r.region, 2, repr(r.rmse_w2), repr(r.mae_w2), repr(r.cor_w2)])


TABLE_COLUMNS = [
    ("rmse_w1", "RMSE 1 Week Ahead", min), ("rmse_w2", "RMSE 2 Weeks Ahead", min),
    ("mae_w1", "MAE 1 Week Ahead", min), ("mae_w2", "MAE 2 Weeks Ahead", min),
    ("cor_w1", "Cor 1 Week Ahead", max), ("cor_w2", "Cor 2 Weeks Ahead", max),
]


def sort_rows(rows: Iterable[MetricRow]) -> list[MetricRow]:
    """Ascending mean of the 1- and 2-week RMSE."""
    return sorted(rows, key=lambda r: (math.inf if math.isnan(r.mean_rmse) else r.mean_rmse, r.method))


def render_table(rows: Iterable[MetricRow], title: str) -> str:
    """Markdown table; the best value in each column is bold."""
    rows = sort_rows(rows)
    best = {}
    for attr, _, pick in TABLE_COLUMNS:
        vals = [getattr(r, attr) for r in rows if not math.isnan(getattr(r, attr))]
        best[attr] = pick(vals) if vals else None
    lines = [f"### {title}", "", "| Methods | " + " | ".join(h for _, h, _ in TABLE_COLUMNS) + " |",
             "|:--|" + "--:|" * len(TABLE_COLUMNS)]
    for r in rows:
        cells = []
        for attr, _, _ in TABLE_COLUMNS:
            v = getattr(r, attr)
            if math.isnan(v):
                cells.append("NA")
            else:
                txt = f"{v:.3f}"
                cells.append(f"**{txt}**" if v == best[attr] else txt)
        lines.append(f"| {r.method} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def render_report(rows: Iterable[MetricRow], out_dir, forecasts: Iterable[WeeklyForecast] = (),
                  truth: Mapping | None = None, charts: bool = True) -> list[Path]:
    """Write ``metrics.csv``, ``report.md`` and one ``<region>_forecasts.svg`` per region."""
    rows = list(rows)
    if not rows:
        raise ValueError("no metric rows to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / "metrics.csv", out_dir / "report.md"]
    write_metrics(rows, written[0])

    by_region = defaultdict(list)
    for r in rows:
        by_region[r.region].append(r)
    order = sorted(by_region, key=lambda g: (g == STATE_AVERAGE, REGIONS.index(g) if g in REGIONS else 0))
    parts = ["# Forecast comparison", ""]
    for region in order:
        title = "State average" if region == STATE_AVERAGE else (
            "National" if region == NATIONAL else f"State {region}")
        parts.append(render_table(by_region[region], title))
    written[1].write_text("\n".join(parts))

    if charts and truth is not None:
        forecasts = list(forecasts)
        for region in order:
            if region == STATE_AVERAGE:
                continue
            path = out_dir / f"{region}_forecasts.svg"
            _chart(region, [f for f in forecasts if f.region == region], truth, path)
            written.append(path)
    return written


def _chart(region, forecasts, truth, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(2, 1, figsize=(9, 7), sharex=True)
    weeks = sorted(d for r, d in truth if r == region)
    for ax, h in zip(axes, (1, 2)):
        ax.plot(weeks, [truth[(region, d)] for d in weeks], color="black", lw=2, label="Truth")
        for method in sorted({f.method for f in forecasts}):
            pts = sorted((f.target_week_start, f.value) for f in forecasts
                         if f.method == method and f.horizon_weeks == h)
            if pts:
                ax.plot(*zip(*pts), lw=1.2, label=method)
        ax.set_title(f"{region}: {h}-week-ahead weekly hospitalizations")
        ax.legend(fontsize=8)
    fig.autofmt_xdate()
    with matplotlib.rc_context({"svg.hashsalt": "argohosp"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
