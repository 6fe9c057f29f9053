"""Query-signal cleaning: rolling outlier filter, smoothing, lag search, term selection."""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .core_data import DailySeries, DataError

log = logging.getLogger(__name__)

# absolute deviation below which a point is never an outlier (covers sd == 0)
FLAT_EPS = 1e-9


class SeriesTooShort(DataError):
    pass


class EmptySelection(DataError):
    pass


class InsufficientOverlap(DataError):
    pass


@dataclass(frozen=True)
class LagTable:
    entries: Mapping[str, int]

    def __getitem__(self, term: str) -> int:
        return self.entries[term]

    def __contains__(self, term):
        return term in self.entries

    def restrict(self, terms: Iterable[str]) -> "LagTable":
        return LagTable({t: self.entries[t] for t in terms})


@dataclass(frozen=True)
class TermSelection:
    terms: tuple[str, ...]
    correlations: tuple[float, ...]

    def __len__(self):
        return len(self.terms)


def iqr_filter(s: DailySeries, window: int = 7, k_sd: float = 3.0) -> DailySeries:
    """Replace points further than ``k_sd`` trailing sds from the trailing mean.

    Window statistics always come from the original values; letting
    replacements enter later windows makes a trending series lock onto a
    constant. The sd is the sample sd (ddof=1).
    """
    if window < 2:
        raise ValueError("window must be at least 2")
    x = np.asarray(s.values, dtype=float)
    if len(x) <= window:
        raise SeriesTooShort(f"{s.variable} for {s.region}: {len(x)} values, window {window}")
    past = np.lib.stride_tricks.sliding_window_view(x[:-1], window)
    m = past.mean(axis=1)
    sd = past.std(axis=1, ddof=1)
    dev = np.abs(x[window:] - m)
    flag = (dev > FLAT_EPS) & (dev > k_sd * sd)
    out = x.copy()
    out[window:][flag] = m[flag]
    return s.with_values(out)


def moving_average(s: DailySeries, w: int = 7) -> DailySeries:
    """Trailing ``w``-day mean; the result starts ``w - 1`` days later."""
    if w < 1:
        raise ValueError("w must be at least 1")
    if len(s) < w:
        raise SeriesTooShort(f"{s.variable} for {s.region}: {len(s)} values, w={w}")
    if w == 1:
        return s
    out = np.lib.stride_tricks.sliding_window_view(s.values, w).mean(axis=1)
    return s.with_values(out, s.start_date + dt.timedelta(days=w - 1))


def _lagged_pairs(x: DailySeries, y: DailySeries, lag: int):
    """Arrays ``(y[t], x[t - lag])`` over every ``t`` of ``y`` where ``x`` is available."""
    lo = max(y.start_date, x.start_date + dt.timedelta(days=lag))
    hi = min(y.end_date, x.end_date + dt.timedelta(days=lag))
    if lo > hi:
        return np.empty(0), np.empty(0)
    n = (hi - lo).days + 1
    iy = y.index_of(lo)
    ix = x.index_of(lo - dt.timedelta(days=lag))
    return y.values[iy:iy + n], x.values[ix:ix + n]


def _simple_ls_mse(target: np.ndarray, pred: np.ndarray) -> float:
    xc = pred - pred.mean()
    yc = target - target.mean()
    sxx = xc @ xc
    slope = (xc @ yc) / sxx if sxx > 0 else 0.0
    resid = yc - slope * xc
    return float(resid @ resid / len(target))


def optimal_lag(x: DailySeries, y: DailySeries, lag_min: int = 0, lag_max: int = 21,
                min_overlap: int = 3) -> int:
    """Lag ``L`` whose fit ``y[t] ~ a + b x[t - L]`` has the lowest in-sample MSE.

    ``y`` defines the fit window; ``x`` may start earlier so that lagged values
    before the window are used. Ties go to the smaller lag.
    """
    if lag_min < 0 or lag_max < lag_min:
        raise ValueError("need 0 <= lag_min <= lag_max")
    best, best_mse = None, np.inf
    for lag in range(lag_min, lag_max + 1):
        ty, tx = _lagged_pairs(x, y, lag)
        if len(ty) < min_overlap:
            log.debug("lag %d skipped: overlap %d", lag, len(ty))
            continue
        mse = _simple_ls_mse(ty, tx)
        if mse < best_mse:
            best, best_mse = lag, mse
    if best is None:
        raise InsufficientOverlap(f"no lag in {lag_min}..{lag_max} has {min_overlap} overlapping days")
    return best


def lagged_correlation(x: DailySeries, y: DailySeries, lag: int = 0) -> float:
    ty, tx = _lagged_pairs(x, y, lag)
    if len(ty) < 2 or np.ptp(tx) == 0 or np.ptp(ty) == 0:
        return float("nan")
    return float(np.corrcoef(ty, tx)[0, 1])


def select_terms(queries: Iterable[DailySeries], y: DailySeries, threshold: float = 0.6,
                 k_max: int = 11, lags: LagTable | None = None) -> TermSelection:
    """Keep the (at most ``k_max``) queries whose correlation with ``y`` exceeds ``threshold``.

    With ``lags`` each query is shifted by its own lag before correlating.
    """
    scored = []
    for q in queries:
        term = q.variable.term
        rho = lagged_correlation(q, y, lags[term] if lags is not None else 0)
        if np.isnan(rho):
            log.warning("query %r has zero variance on the selection window; excluded", term)
            continue
        if rho > threshold:
            scored.append((-rho, term))
    if not scored:
        raise EmptySelection(f"no query correlates above {threshold}")
    scored.sort()
    scored = scored[:k_max]
    return TermSelection(tuple(t for _, t in scored), tuple(-r for r, _ in scored))


def clean_query(s: DailySeries, filter_window: int = 7, k_sd: float = 3.0,
                smooth: int = 7) -> DailySeries:
    """Outlier filter followed by trailing smoothing, as fed to the regression."""
    return moving_average(iqr_filter(s, filter_window, k_sd), smooth)


@dataclass(frozen=True)
class SelectionReport:
    selection: TermSelection
    lags: LagTable
    all_lags: Mapping[str, int]
    all_correlations: Mapping[str, float]


def prepare_terms(queries: Iterable[DailySeries], y: DailySeries, start: dt.date, end: dt.date,
                  threshold: float = 0.6, k_max: int = 11, lag_min: int = 0, lag_max: int = 21,
                  filter_window: int = 7, k_sd: float = 3.0, smooth: int = 7) -> SelectionReport:
    """Filter, find lags, smooth and select terms on the window ``[start, end]``.

    Query history before ``start`` is used for lagged values only.
    """
    target = y.window(start, end)
    filtered, all_lags, all_cor = {}, {}, {}
    for q in queries:
        term = q.variable.term
        hist = q.window(q.start_date, min(q.end_date, end))
        f = iqr_filter(hist, filter_window, k_sd)
        try:
            all_lags[term] = optimal_lag(f, target, lag_min, lag_max)
        except InsufficientOverlap:
            log.warning("query %r: no usable lag; excluded", term)
            continue
        filtered[term] = moving_average(f, smooth)
    lag_table = LagTable(all_lags)
    for term, s in filtered.items():
        all_cor[term] = lagged_correlation(s, target, all_lags[term])
    selection = select_terms(filtered.values(), target, threshold, k_max, lag_table)
    return SelectionReport(selection, lag_table.restrict(selection.terms), all_lags, all_cor)


def write_selection(selection: TermSelection, lags: LagTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term", "lag", "correlation"])
        for term, rho in zip(selection.terms, selection.correlations):
            w.writerow([term, lags[term], repr(float(rho))])


def write_lags(all_lags: Mapping[str, int], correlations: Mapping[str, float], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term", "lag", "correlation"])
        for term in sorted(all_lags):
            w.writerow([term, all_lags[term], repr(float(correlations.get(term, float("nan"))))])


def read_selection(path) -> tuple[TermSelection, LagTable]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise EmptySelection(f"{path}: no selected terms")
    terms = tuple(r["term"] for r in rows)
    if len(set(terms)) != len(terms):
        raise DataError(f"{path}: duplicate terms")
    sel = TermSelection(terms, tuple(float(r["correlation"]) for r in rows))
    return sel, LagTable({r["term"]: int(r["lag"]) for r in rows})
