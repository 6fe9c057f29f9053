"""Synthetic panel drawn from a known linear model of the regression's form.

A smooth latent epidemic curve ``z`` drives everything. Informative query
terms lead it, ``X_k(t) = a_k z(t + O_k) + noise``, so
``X_k(t - O_k)`` tracks ``z(t)``. Hospitalizations of every region are an
exact linear function of the lagged informative terms plus weekday effects
and noise:

    y_r(t) = mu_r + sum_k delta_{k,r} X_k(t - O_k) + sum_d tau_{d,r} 1{t is weekday d} + eps

Cases lead ``z`` by 14 days and vaccination coverage follows a logistic
ramp; both carry zero weight in the generating model. Uninformative query
terms are independent random walks. Run ``python -m argohosp.synthetic DIR``
to write the CSV files and a ready-to-use configuration into ``DIR``.
"""

from __future__ import annotations

import datetime as dt
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_data import CASES, HOSP, VACC, DailySeries, Layout, Variable, align_bundle, load_adjacency, write_series

TERM_LAGS = (4, 4, 9, 7, 7, 7, 4, 21, 7, 4, 4)
DEFAULT_REGIONS = ("US", "DC", "MD", "VA", "HI")
SCALE = {"US": 6000.0, "DC": 40.0, "MD": 180.0, "VA": 250.0, "HI": 30.0}
START = dt.date(2020, 7, 15)
END = dt.date(2021, 7, 15)


@dataclass
class Fixture:
    series: list[DailySeries]
    start: dt.date
    end: dt.date
    term_lags: dict[str, int]
    delta: dict[str, np.ndarray] = field(default_factory=dict)
    tau: dict[str, np.ndarray] = field(default_factory=dict)
    mu: dict[str, float] = field(default_factory=dict)

    def bundle(self):
        return align_bundle(self.series, load_adjacency(), self.start, self.end)


def _latent(rng, n, lead):
    """Positive smooth multi-wave curve on ``n + lead`` days."""
    t = np.arange(n + lead, dtype=float)
    z = np.full(t.shape, 0.25)
    centers = np.arange(40.0, n + lead, 75.0) + rng.uniform(-15, 15, size=len(np.arange(40.0, n + lead, 75.0)))
    for c in centers:
        z += rng.uniform(0.6, 1.4) * np.exp(-0.5 * ((t - c) / rng.uniform(14, 24)) ** 2)
    return z


def make_fixture(seed: int = 0, start: dt.date = START, end: dt.date = END,
                 regions=DEFAULT_REGIONS, n_noise_terms: int = 6, noise: float = 0.02) -> Fixture:
    rng = np.random.default_rng(seed)
    n = (end - start).days + 1
    lead = max(TERM_LAGS) + 14
    z = _latent(rng, n, lead)
    dates_wd = np.array([(start + dt.timedelta(days=i)).weekday() for i in range(n)])

    series = []
    term_lags = {}
    lagged, amps = [], []
    for k, lag in enumerate(TERM_LAGS):
        name = f"term{k + 1:02d}"
        a = rng.uniform(20, 60)
        amps.append(a)
        raw = a * z[lag:lag + n] + 2.0 + rng.normal(0, 0.5, size=n)
        x = np.maximum(raw, 0.0)
        term_lags[name] = lag
        series.append(DailySeries("US", Variable.query(name), start, x))
        # X_k(t - O_k); the first O_k days fall before the panel and use the generator directly
        prev = np.concatenate([np.maximum(a * z[:lag] + 2.0, 0.0), x])[:n]
        lagged.append(prev)
    lagged = np.array(lagged)
    for k in range(n_noise_terms):
        walk = 30 + np.cumsum(rng.normal(0, 1.0, size=n))
        series.append(DailySeries("US", Variable.query(f"noise{k + 1:02d}"), start, np.abs(walk)))

    fx = Fixture(series, start, end, term_lags)
    for r in regions:
        s = SCALE.get(r, 100.0) * rng.uniform(0.8, 1.2)
        weights = rng.dirichlet(np.ones(len(TERM_LAGS)))
        delta = s * weights / np.array(amps)
        tau = s * rng.uniform(-0.08, 0.08, size=6)
        mu = 0.1 * s
        wd = np.zeros(n)
        for d in range(6):
            wd += tau[d] * (dates_wd == d)
        mean = mu + delta @ lagged + wd
        y = np.maximum(np.round(mean + rng.normal(0, noise * s + 0.5, size=n)), 0.0)
        fx.delta[r], fx.tau[r], fx.mu[r] = delta, tau, mu
        series.append(DailySeries(r, HOSP, start, y))
        cases = s * 8 * z[14:14 + n] * (1 + 0.15 * (dates_wd == 0)) + rng.normal(0, 0.02 * s * 8, size=n)
        series.append(DailySeries(r, CASES, start, np.maximum(np.round(cases), 0.0)))
        ramp = 1 / (1 + np.exp(-(np.arange(n) - (dt.date(2021, 3, 15) - start).days) / 25.0))
        vacc = np.round(rng.uniform(50, 70) * ramp * (np.arange(n) >= (dt.date(2020, 12, 14) - start).days), 2)
        series.append(DailySeries(r, VACC, start, np.maximum.accumulate(vacc)))
    return fx


def write_fixture(out_dir, seed: int = 0, **kwargs) -> Path:
    """Write CSV inputs and ``config.json``; returns the config path."""
    out = Path(out_dir)
    (out / "data").mkdir(parents=True, exist_ok=True)
    fx = make_fixture(seed, **kwargs)
    by_var = {}
    for s in fx.series:
        key = "queries" if s.variable.term else s.variable.kind.value
        by_var.setdefault(key, []).append(s)
    names = {"hospitalizations": "hospitalizations.csv", "cases": "cases.csv",
             "vaccination": "vaccination.csv", "queries": "queries.csv"}
    for key, fname in names.items():
        write_series(by_var[key], out / "data" / fname, Layout.WIDE)
    config = {
        "data": {k: f"data/{v}" for k, v in names.items()},
        "selection_window": ["2020-08-01", "2020-12-31"],
        "backtest": {"start": "2021-01-04", "end": "2021-05-31", "regions": ["US", "DC", "HI"], "seed": 0},
        "output_dir": "output",
    }
    path = out / "config.json"
    path.write_text(json.dumps(config, indent=2) + "\n")
    return path


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else "demo"
    print(write_fixture(target))
