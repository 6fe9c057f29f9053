"""Regression features for one (region, horizon, issue date).

Column order, for a training row anchored at day ``t`` and horizon ``l``:

1. hospitalizations ``y[t - i]`` for ``i = 0..6``
2. cases ``c[t + l - j]`` for ``j`` in ``{max(7, l), max(28, l)}``
3. neighbor hospitalizations ``y_m[t]``, neighbors in alphabetical order
   (absent for the national region)
4. vaccination ``v[t + l - max(7, l)]``
5. query terms ``X_k[t + l - max(O_k, l)]`` in selection order
6. weekday indicators of ``t + l``, Monday..Saturday (Sunday is the baseline)

The target of that row is ``y[t + l]``. The prediction row uses the same
layout anchored at the issue date ``T``; every offset is non-positive
relative to ``T``, so nothing after ``T`` is read.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
from dataclasses import dataclass, field

import numpy as np

from .core_data import CASES, HOSP, NATIONAL, VACC, DataBundle, DataError, Variable, neighbors_of, region_id
from .preprocess import LagTable, TermSelection

AR_LAGS = 6
MAX_HORIZON = 14
WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat")


class InsufficientHistory(DataError):
    pass


class Group(enum.Enum):
    INTERCEPT = "intercept"
    AUTO_LAG = "auto_lag"
    CASE_LAG = "case_lag"
    NEIGHBOR = "neighbor"
    VACCINATION = "vaccination"
    SEARCH_TERM = "search_term"
    WEEKDAY = "weekday"


@dataclass(frozen=True)
class FeatureGroup:
    name: Group
    column_labels: tuple[str, ...]


@dataclass(frozen=True)
class Column:
    group: Group
    label: str
    region: str | None = None
    variable: Variable | None = None
    offset: int = 0
    weekday: int | None = None


@dataclass(frozen=True)
class DesignMatrix:
    rows: np.ndarray = field(repr=False)
    target: np.ndarray = field(repr=False)
    groups: tuple[FeatureGroup, ...]
    row_dates: tuple[dt.date, ...]
    horizon: int
    region: str
    issue_date: dt.date
    prediction_row: np.ndarray = field(repr=False)

    @property
    def labels(self) -> list[str]:
        return [lab for g in self.groups for lab in g.column_labels]

    @property
    def shape(self):
        return self.rows.shape


def lag_sets(l: int) -> tuple[list[int], list[int], int]:
    """Case lags ``J``, vaccination lags ``Q`` and the autoregressive order ``I``."""
    if not 1 <= l <= MAX_HORIZON:
        raise ValueError(f"horizon must be in 1..{MAX_HORIZON}, got {l}")
    J = sorted({max(7, l), max(28, l)})
    return J, [max(7, l)], AR_LAGS


def weekday_dummies(d: dt.date) -> np.ndarray:
    out = np.zeros(6)
    if d.weekday() < 6:
        out[d.weekday()] = 1.0
    return out


def columns(adjacency, region: str, l: int, terms: TermSelection, lags: LagTable) -> list[Column]:
    region = region_id(region)
    J, Q, I = lag_sets(l)
    cols = [Column(Group.AUTO_LAG, f"hosp[t-{i}]", region, HOSP, -i) for i in range(I + 1)]
    cols += [Column(Group.CASE_LAG, f"cases[t+l-{j}]", region, CASES, l - j) for j in J]
    if region != NATIONAL:
        cols += [Column(Group.NEIGHBOR, f"hosp_{m}[t]", m, HOSP, 0)
                 for m in sorted(neighbors_of(adjacency, region))]
    cols += [Column(Group.VACCINATION, f"vacc[t+l-{q}]", region, VACC, l - q) for q in Q]
    for term in terms.terms:
        o = max(lags[term], l)
        cols.append(Column(Group.SEARCH_TERM, f"{term}[t+l-{o}]", NATIONAL, Variable.query(term), l - o))
    cols += [Column(Group.WEEKDAY, f"is_{name}[t+l]", weekday=d) for d, name in enumerate(WEEKDAYS)]
    return cols


def _group_layout(cols: list[Column]) -> tuple[FeatureGroup, ...]:
    out = []
    for g in Group:
        labels = tuple(c.label for c in cols if c.group is g)
        if labels:
            out.append(FeatureGroup(g, labels))
    return tuple(out)


def build_design(bundle: DataBundle, region: str, l: int, issue_date: dt.date,
                 terms: TermSelection, lags: LagTable, M: int = 56) -> DesignMatrix:
    region = region_id(region)
    cols = columns(bundle.adjacency, region, l, terms, lags)
    iT = bundle.index_of(issue_date)
    if iT >= bundle.n_days:
        raise InsufficientHistory(f"issue date {issue_date} is after the bundle end {bundle.end}")
    anchors = np.arange(iT - M - l + 1, iT - l + 1)
    earliest = anchors[0] + min(c.offset for c in cols)
    if earliest < 0:
        raise InsufficientHistory(
            f"{region} l={l} T={issue_date}: needs data from {bundle.day(earliest)}, bundle starts {bundle.start}")

    anchor_all = np.append(anchors, iT)
    mat = np.empty((len(anchor_all), len(cols)))
    for k, c in enumerate(cols):
        if c.group is Group.WEEKDAY:
            # weekday() of the target day t + l; Monday == 0
            wd = np.array([(bundle.day(int(i) + l)).weekday() for i in anchor_all])
            mat[:, k] = (wd == c.weekday).astype(float)
        else:
            mat[:, k] = bundle.array(c.region, c.variable)[anchor_all + c.offset]
    target = bundle.array(region, HOSP)[anchors + l]
    return DesignMatrix(
        rows=mat[:-1], target=target, groups=_group_layout(cols),
        row_dates=tuple(bundle.day(int(i)) for i in anchors), horizon=l, region=region,
        issue_date=issue_date, prediction_row=mat[-1],
    )


def dump_design(design: DesignMatrix, path) -> None:
    """Labeled CSV of training rows and, last, the prediction row (empty target)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "target"] + design.labels)
        for day, y, row in zip(design.row_dates, design.target, design.rows):
            w.writerow([day.isoformat(), repr(float(y))] + [repr(float(v)) for v in row])
        w.writerow([design.issue_date.isoformat(), ""] + [repr(float(v)) for v in design.prediction_row])
