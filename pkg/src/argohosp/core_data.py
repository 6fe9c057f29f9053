"""Domain types, CSV ingestion, calendar alignment and the state adjacency map.

Every series in this package is a gap-free run of daily values. Missing days in
an input file are a hard error: lag features index by calendar offset, so a
silently imputed day would shift every downstream feature.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

STATES = (
    "AL", "AK", "AZ", "AR", "CA", "CO", "CT", "DE", "DC", "FL", "GA", "HI",
    "ID", "IL", "IN", "IA", "KS", "KY", "LA", "ME", "MD", "MA", "MI", "MN",
    "MS", "MO", "MT", "NE", "NV", "NH", "NJ", "NM", "NY", "NC", "ND", "OH",
    "OK", "OR", "PA", "RI", "SC", "SD", "TN", "TX", "UT", "VT", "VA", "WA",
    "WV", "WI", "WY",
)
NATIONAL = "US"
REGIONS = (NATIONAL,) + STATES


class DataError(ValueError):
    """Base class for ingestion and alignment failures."""


class UnknownRegion(DataError):
    pass


class DuplicateRow(DataError):
    pass


class NonContiguous(DataError):
    def __init__(self, missing: dt.date, where: str = ""):
        self.missing = missing
        super().__init__(f"non-contiguous dates{where}: first missing day {missing.isoformat()}")


class IncompleteCoverage(DataError):
    def __init__(self, region: str, variable: "Variable", missing: dt.date):
        self.region = region
        self.variable = variable
        self.missing = missing
        super().__init__(
            f"{variable} for {region} does not cover {missing.isoformat()}"
        )


class InvalidValue(DataError):
    pass


def region_id(code: str) -> str:
    """Normalize a region code to its canonical uppercase form."""
    norm = str(code).strip().upper()
    if norm not in REGIONS:
        raise UnknownRegion(f"unknown region {code!r}")
    return norm


class Kind(enum.Enum):
    HOSPITALIZATIONS = "hospitalizations"
    CASES = "cases"
    VACCINATION_PCT = "vaccination"
    QUERY_TERM = "query"


@dataclass(frozen=True, order=True)
class Variable:
    kind: Kind
    term: str | None = None

    def __post_init__(self):
        if (self.kind is Kind.QUERY_TERM) != (self.term is not None):
            raise ValueError("a term name is required for query variables only")

    def __str__(self):
        if self.kind is Kind.QUERY_TERM:
            return f"query:{self.term}"
        return self.kind.value

    @classmethod
    def query(cls, term: str) -> "Variable":
        return cls(Kind.QUERY_TERM, term)

    @classmethod
    def parse(cls, text: str) -> "Variable":
        if text.startswith("query:"):
            return cls.query(text[len("query:"):])
        return cls(Kind(text))


HOSP = Variable(Kind.HOSPITALIZATIONS)
CASES = Variable(Kind.CASES)
VACC = Variable(Kind.VACCINATION_PCT)


def _check_values(values: np.ndarray, variable: Variable, region: str) -> None:
    if not np.all(np.isfinite(values)):
        raise InvalidValue(f"non-finite {variable} value for {region}")
    if np.any(values < 0):
        raise InvalidValue(f"negative {variable} value for {region}")
    if variable.kind is Kind.VACCINATION_PCT and np.any(values > 100):
        raise InvalidValue(f"vaccination percentage above 100 for {region}")


@dataclass(frozen=True, eq=False)
class DailySeries:
    region: str
    variable: Variable
    start_date: dt.date
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "region", region_id(self.region))
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValueError("values must be one-dimensional")
        _check_values(vals, self.variable, self.region)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)

    def __eq__(self, other):
        if not isinstance(other, DailySeries):
            return NotImplemented
        return ((self.region, self.variable, self.start_date) == (other.region, other.variable, other.start_date)
                and np.array_equal(self.values, other.values))

    __hash__ = None

    @property
    def end_date(self) -> dt.date:
        return self.start_date + dt.timedelta(days=len(self.values) - 1)

    @property
    def dates(self) -> list[dt.date]:
        return [self.start_date + dt.timedelta(days=i) for i in range(len(self.values))]

    def index_of(self, day: dt.date) -> int:
        i = (day - self.start_date).days
        if i < 0 or i >= len(self.values):
            raise KeyError(day)
        return i

    def value_at(self, day: dt.date) -> float:
        return float(self.values[self.index_of(day)])

    def covers(self, start: dt.date, end: dt.date) -> bool:
        return self.start_date <= start and end <= self.end_date

    def window(self, start: dt.date, end: dt.date) -> "DailySeries":
        """Sub-series for the inclusive range [start, end]."""
        if not self.covers(start, end):
            missing = start if start < self.start_date else self.end_date + dt.timedelta(days=1)
            raise IncompleteCoverage(self.region, self.variable, missing)
        i, j = self.index_of(start), self.index_of(end)
        return DailySeries(self.region, self.variable, start, self.values[i:j + 1])

    def with_values(self, values, start_date: dt.date | None = None) -> "DailySeries":
        return DailySeries(self.region, self.variable, start_date or self.start_date, values)


class Layout(enum.Enum):
    LONG = "long"
    WIDE = "wide"


def _parse_dates(col: pd.Series, path) -> list[dt.date]:
    out = []
    for k, raw in enumerate(col.astype(str)):
        try:
            out.append(dt.date.fromisoformat(raw.strip()))
        except ValueError:
            raise DataError(f"{path}: unparseable date {raw!r} on data row {k + 1}") from None
    return out


def _parse_values(col: pd.Series, path, label) -> np.ndarray:
    vals = pd.to_numeric(col, errors="coerce")
    bad = vals.isna() & col.notna() | col.isna()
    if bad.any():
        k = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataError(f"{path}: unparseable value {col.iloc[k]!r} for {label} on data row {k + 1}")
    return vals.to_numpy(dtype=float)


def _contiguous(dates: list[dt.date], where: str) -> None:
    for a, b in zip(dates, dates[1:]):
        if (b - a).days != 1:
            raise NonContiguous(a + dt.timedelta(days=1), where)


def load_series(path, variable: Variable, layout: Layout | str = Layout.WIDE) -> list[DailySeries]:
    """Read one variable for one or more regions from a CSV file.

    ``long`` files have columns ``(date, region, value)``; ``wide`` files have a
    ``date`` column followed by one column per region. For query variables in a
    wide file the columns are term names and all series are national.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    layout = Layout(layout)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""])
    if frame.empty:
        raise DataError(f"{path}: no data rows")
    if "date" not in frame.columns:
        raise DataError(f"{path}: missing 'date' column")
    frame["date"] = _parse_dates(frame["date"], path)
    out = []
    if layout is Layout.LONG:
        missing = {"region", "value"} - set(frame.columns)
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        frame["region"] = [region_id(r) for r in frame["region"]]
        dup = frame.duplicated(["date", "region"])
        if dup.any():
            row = frame[dup].iloc[0]
            raise DuplicateRow(f"{path}: duplicate row for ({row['date']}, {row['region']})")
        for region, grp in frame.groupby("region", sort=True):
            grp = grp.sort_values("date")
            dates = list(grp["date"])
            _contiguous(dates, f" in {path} for {region}")
            vals = _parse_values(grp["value"], path, region)
            out.append(DailySeries(region, variable, dates[0], vals))
        return out

    if frame["date"].duplicated().any():
        day = frame.loc[frame["date"].duplicated(), "date"].iloc[0]
        raise DuplicateRow(f"{path}: duplicate rows for {day}")
    frame = frame.sort_values("date")
    dates = list(frame["date"])
    _contiguous(dates, f" in {path}")
    for col in frame.columns:
        if col == "date":
            continue
        vals = _parse_values(frame[col], path, col)
        if variable.kind is Kind.QUERY_TERM:
            out.append(DailySeries(NATIONAL, Variable.query(col), dates[0], vals))
        else:
            out.append(DailySeries(col, variable, dates[0], vals))
    return out


def load_queries(path) -> list[DailySeries]:
    """National query-frequency series from a wide ``(date, term1, term2, ...)`` file."""
    return load_series(path, Variable.query("*"), Layout.WIDE)


def format_value(v: float) -> str:
    """Shortest text that round-trips ``v``; integral values carry no decimal point."""
    return np.format_float_positional(float(v), trim="-")


def write_series(series: Iterable[DailySeries], path, layout: Layout | str = Layout.WIDE) -> None:
    """Inverse of :func:`load_series`. Wide output requires a common date span."""
    series = list(series)
    layout = Layout(layout)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if layout is Layout.LONG:
            w.writerow(["date", "region", "value"])
            for s in series:
                for day, v in zip(s.dates, s.values):
                    w.writerow([day.isoformat(), s.region, format_value(v)])
            return
        if len({(s.start_date, len(s)) for s in series}) > 1:
            raise DataError("wide layout requires series with identical date spans")
        labels = [s.variable.term if s.variable.kind is Kind.QUERY_TERM else s.region for s in series]
        w.writerow(["date"] + labels)
        for i, day in enumerate(series[0].dates):
            w.writerow([day.isoformat()] + [format_value(s.values[i]) for s in series])


@dataclass(frozen=True)
class AdjacencyMap:
    neighbors: Mapping[str, frozenset]

    def __post_init__(self):
        nb = {region_id(r): frozenset(region_id(m) for m in ms) for r, ms in self.neighbors.items()}
        for r in REGIONS:
            nb.setdefault(r, frozenset())
        for a, ms in nb.items():
            if a in ms:
                raise DataError(f"adjacency self-loop at {a}")
            for b in ms:
                if a not in nb[b]:
                    raise DataError(f"adjacency not symmetric: {a}->{b} without {b}->{a}")
        if nb[NATIONAL]:
            raise DataError("the national region cannot have neighbors")
        object.__setattr__(self, "neighbors", nb)

    def __getitem__(self, r: str) -> frozenset:
        return neighbors_of(self, r)


def load_adjacency(path=None) -> AdjacencyMap:
    """Read ``(state, neighbor)`` pairs; defaults to the shipped land-border table."""
    if path is None:
        text = resources.files("argohosp").joinpath("data/adjacency.csv").read_text()
    else:
        text = Path(path).read_text()
    rows = list(csv.DictReader(text.splitlines()))
    nb: dict[str, set] = {}
    for row in rows:
        a, b = region_id(row["state"]), region_id(row["neighbor"])
        nb.setdefault(a, set()).add(b)
    return AdjacencyMap({k: frozenset(v) for k, v in nb.items()})


def neighbors_of(adjacency: AdjacencyMap, r: str) -> frozenset:
    return adjacency.neighbors[region_id(r)]


@dataclass(frozen=True)
class DataBundle:
    """Calendar-aligned panel; every series spans exactly ``[start, end]``."""

    series: Mapping[tuple[str, Variable], DailySeries]
    adjacency: AdjacencyMap
    start: dt.date
    end: dt.date

    @property
    def date_range(self) -> tuple[dt.date, dt.date]:
        return self.start, self.end

    @property
    def n_days(self) -> int:
        return (self.end - self.start).days + 1

    @property
    def regions(self) -> list[str]:
        return sorted({r for r, _ in self.series}, key=REGIONS.index)

    @property
    def terms(self) -> list[str]:
        return sorted(v.term for r, v in self.series if v.kind is Kind.QUERY_TERM)

    def get(self, region: str, variable: Variable) -> DailySeries:
        key = (region_id(region), variable)
        try:
            return self.series[key]
        except KeyError:
            raise DataError(f"bundle has no {variable} series for {key[0]}") from None

    def has(self, region: str, variable: Variable) -> bool:
        return (region_id(region), variable) in self.series

    def array(self, region: str, variable: Variable) -> np.ndarray:
        return self.get(region, variable).values

    def index_of(self, day: dt.date) -> int:
        return (day - self.start).days

    def day(self, index: int) -> dt.date:
        return self.start + dt.timedelta(days=int(index))

    def truncate(self, end: dt.date) -> "DataBundle":
        """Bundle restricted to data dated on or before ``end``."""
        return align_bundle(self.series.values(), self.adjacency, self.start, min(end, self.end))

    def replace_series(self, new: Iterable[DailySeries]) -> "DataBundle":
        merged = dict(self.series)
        for s in new:
            merged[(s.region, s.variable)] = s
        return align_bundle(merged.values(), self.adjacency, self.start, self.end)


def align_bundle(series: Iterable[DailySeries], adjacency: AdjacencyMap,
                 start: dt.date, end: dt.date) -> DataBundle:
    if start > end:
        raise DataError(f"empty date range {start}..{end}")
    out = {}
    for s in series:
        if s.variable.kind is Kind.QUERY_TERM and s.region != NATIONAL:
            raise DataError(f"query series must be national, got {s.region} for {s.variable}")
        key = (s.region, s.variable)
        if key in out:
            raise DuplicateRow(f"two series for {s.variable} in {s.region}")
        out[key] = s.window(start, end)
    for region in {r for r, _ in out}:
        if (region, HOSP) not in out:
            raise DataError(f"region {region} has no hospitalizations series")
    return DataBundle(dict(sorted(out.items(), key=lambda kv: (REGIONS.index(kv[0][0]), str(kv[0][1])))),
                      adjacency, start, end)
