import datetime as dt
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from argohosp.backtest import WeeklyForecast
from argohosp.evaluate import (METRIC_FIELDS, STATE_AVERAGE, MetricRow, MissingTruth, ZeroVariance, filter_external,
                               mae, pearson, render_report, render_table, rmse, score, sort_rows, state_averages,
                               weekly_truth)

T = dt.date(2021, 1, 4)
# rounded so that squared differences never underflow
num = st.floats(-1e6, 1e6, allow_nan=False).map(lambda v: round(v, 6))
vec = st.lists(num, min_size=2, max_size=40)


def test_rmse_examples():
    assert rmse([1, 2, 3], [1, 2, 3]) == 0
    assert rmse([1, 3], [2, 5]) == pytest.approx(math.sqrt(2.5), abs=1e-10)
    assert abs(rmse([1, 3], [2, 5]) - 1.58114) < 1e-5
    with pytest.raises(ValueError):
        rmse([1, 2], [1])
    with pytest.raises(ValueError):
        rmse([], [])


def test_mae_examples():
    assert mae([4, 5], [4, 5]) == 0
    assert mae([1, 3], [2, 5]) == pytest.approx(1.5, abs=1e-10)
    assert mae([3], [7]) == 4


def test_pearson_examples():
    assert pearson([1, 2, 5], [1, 2, 5]) == pytest.approx(1.0, abs=1e-12)
    assert pearson([1, 2, 5], [-1, -2, -5]) == pytest.approx(-1.0, abs=1e-12)
    # cov = 1.5, var_p = 1, var_t = 7/3
    assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(1.5 / math.sqrt(7 / 3), abs=1e-10)
    assert abs(pearson([1, 2, 3], [1, 2, 4]) - 0.98198) < 1e-5
    with pytest.raises(ZeroVariance):
        pearson([2, 2, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson([1], [1])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 40).flatmap(lambda n: st.tuples(
    st.lists(num, min_size=n, max_size=n), st.lists(num, min_size=n, max_size=n))))
def test_rmse_at_least_mae(pair):
    p, t = pair
    assert rmse(p, t) >= mae(p, t) * (1 - 1e-12) >= 0


@settings(max_examples=100, deadline=None)
@given(vec, st.randoms(use_true_random=False))
def test_metrics_permutation_invariant(p, rnd):
    rng = np.random.default_rng(rnd.randint(0, 2 ** 32 - 1))
    t = rng.normal(0, 100, len(p))
    perm = rng.permutation(len(p))
    pp, tp = np.array(p)[perm], t[perm]
    assert rmse(pp, tp) == pytest.approx(rmse(p, t), rel=1e-12)
    assert mae(pp, tp) == pytest.approx(mae(p, t), rel=1e-12)
    if np.ptp(p) > 0:
        assert pearson(pp, tp) == pytest.approx(pearson(p, t), abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3), st.floats(-1e3, 1e3))
def test_pearson_affine_invariant(seed, a, b):
    rng = np.random.default_rng(seed)
    p, t = rng.normal(size=20), rng.normal(size=20)
    assert pearson(a * p + b, t) == pytest.approx(pearson(p, t), abs=1e-10)
    assert pearson(p, a * t + b) == pytest.approx(pearson(p, t), abs=1e-10)
    assert -1 <= pearson(p, t) <= 1


def weeks(n):
    return [T + dt.timedelta(weeks=k) for k in range(n)]


def rows_for(method, region, values_w1, values_w2, starts=None):
    starts = starts or weeks(len(values_w1))
    out = []
    for d, v1, v2 in zip(starts, values_w1, values_w2):
        out.append(WeeklyForecast(method, region, d, d + dt.timedelta(days=1), 1, v1))
        out.append(WeeklyForecast(method, region, d, d + dt.timedelta(days=8), 2, v2))
    return out


def truth_for(region, values):
    return {(region, T + dt.timedelta(days=1 + 7 * k)): v for k, v in enumerate(values)}


def test_perfect_forecast_scores():
    tv = [10.0, 14.0, 9.0, 20.0, 18.0]
    truth = truth_for("US", tv)
    rs = rows_for("ARGO", "US", tv[:4], tv[1:5])
    (row,) = score(rs, truth, average_states=False)
    assert row.rmse_w1 == row.mae_w1 == 0 and row.rmse_w2 == 0
    assert row.cor_w1 == pytest.approx(1.0) and row.cor_w2 == pytest.approx(1.0)


def test_state_average_is_unweighted_mean():
    rows = [MetricRow("ARGO", "MD", 10, 1, 5, 1, 0.9, 0.8), MetricRow("ARGO", "VA", 30, 3, 7, 3, float("nan"), 0.6),
            MetricRow("ARGO", "US", 1e6, 1e6, 1e6, 1e6, 0, 0)]
    (avg,) = state_averages(rows)
    assert avg.region == STATE_AVERAGE
    assert avg.rmse_w1 == 20 and avg.rmse_w2 == 2 and avg.mae_w1 == 6
    # undefined correlations are excluded, not averaged as zero
    assert avg.cor_w1 == pytest.approx(0.9) and avg.cor_w2 == pytest.approx(0.7)


def test_missing_truth_lists_week():
    truth = truth_for("US", [1.0, 2.0])
    rs = rows_for("Naive", "US", [1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    with pytest.raises(MissingTruth) as exc:
        score(rs, truth)
    assert "US 2021-01-19" in str(exc.value)


def test_constant_truth_gives_undefined_correlation(caplog):
    truth = truth_for("US", [5.0] * 4)
    rs = rows_for("ARGO", "US", [4.0, 6.0, 5.0], [5.0, 5.0, 5.0])
    with caplog.at_level(logging.WARNING):
        (row,) = score(rs, truth, average_states=False)
    assert math.isnan(row.cor_w1) and "correlation undefined" in caplog.text


def test_score_disjoint_sets_merge():
    rng = np.random.default_rng(0)
    tv = {r: rng.uniform(10, 100, 8) for r in ("MD", "VA")}
    truth = {**truth_for("MD", tv["MD"]), **truth_for("VA", tv["VA"])}
    a = rows_for("ARGO", "MD", rng.uniform(10, 100, 6), rng.uniform(10, 100, 6))
    b = rows_for("Naive", "VA", rng.uniform(10, 100, 6), rng.uniform(10, 100, 6))
    whole = score(a + b, truth, average_states=False)
    parts = score(a, truth, average_states=False) + score(b, truth, average_states=False)
    assert sorted(whole, key=lambda r: r.method) == sorted(parts, key=lambda r: r.method)


def make_rows():
    return [MetricRow("B", "US", 7, 7, 3, 3, 0.9, 0.8), MetricRow("A", "US", 5, 5, 4, 2, 0.95, 0.7)]


def test_sort_and_best_flag():
    assert [r.method for r in sort_rows(make_rows())] == ["A", "B"]
    table = render_table(make_rows(), "National")
    lines = table.splitlines()
    assert lines[0] == "### National"
    assert lines[2].startswith("| Methods | RMSE 1 Week Ahead | RMSE 2 Weeks Ahead | MAE 1 Week Ahead")
    assert lines[4].startswith("| A | **5.000** | **5.000** | 4.000 | **2.000** | **0.950** | 0.700 |")
    assert lines[5].startswith("| B | 7.000 | 7.000 | **3.000** | 3.000 | 0.900 | **0.800** |")


def test_single_method_all_best():
    table = render_table([MetricRow("ARGO", "US", 1, 2, 1, 2, 0.5, 0.4)], "National")
    row = table.splitlines()[-1]
    assert row.count("**") == 12


def test_filter_external_counts(caplog):
    truth = truth_for("US", [1.0, 2.0, 3.0])
    ext = rows_for("COVIDhub-baseline", "US", [1.0, 2.0], [2.0, 3.0])
    ext.append(WeeklyForecast("COVIDhub-baseline", "US", T + dt.timedelta(days=2), T + dt.timedelta(days=3), 1, 9))
    with caplog.at_level(logging.WARNING):
        kept, dropped = filter_external(ext, truth, weeks(2))
    assert dropped == 1 and len(kept) == 4
    assert "excluded 1 external" in caplog.text


def test_weekly_truth(fixture_bundle):
    from argohosp.core_data import HOSP

    start = dt.date(2021, 1, 5)
    tr = weekly_truth(fixture_bundle, ["US"], [start, fixture_bundle.end])
    i = fixture_bundle.index_of(start)
    assert tr == {("US", start): float(fixture_bundle.array("US", HOSP)[i:i + 7].sum())}


def test_render_report_files(tmp_path):
    tv = [10.0, 14.0, 9.0, 20.0, 18.0]
    truth = {**truth_for("US", tv), **truth_for("MD", tv), **truth_for("VA", tv)}
    rs = []
    for region in ("US", "MD", "VA"):
        rs += rows_for("ARGO", region, [11, 13, 10, 19], [13, 10, 19, 19])
        rs += rows_for("Naive", region, [8, 10, 14, 9], [8, 10, 14, 9])
    metrics = score(rs, truth)
    paths = render_report(metrics, tmp_path, rs, truth)
    names = sorted(p.name for p in paths)
    assert names == ["MD_forecasts.svg", "US_forecasts.svg", "VA_forecasts.svg", "metrics.csv", "report.md"]
    head = (tmp_path / "metrics.csv").read_text().splitlines()[0]
    assert head.split(",") == METRIC_FIELDS
    md = (tmp_path / "report.md").read_text()
    assert md.index("### National") < md.index("### State MD") < md.index("### State average")
    svg = (tmp_path / "US_forecasts.svg").read_bytes()
    render_report(metrics, tmp_path, rs, truth)
    assert (tmp_path / "US_forecasts.svg").read_bytes() == svg
    with pytest.raises(ValueError):
        render_report([], tmp_path)
