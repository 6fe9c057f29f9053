import pytest

from argohosp import synthetic


@pytest.fixture(scope="session")
def fixture_data():
    return synthetic.make_fixture(0)


@pytest.fixture(scope="session")
def fixture_bundle(fixture_data):
    return fixture_data.bundle()


@pytest.fixture(scope="session")
def selected():
    from argohosp.preprocess import LagTable, TermSelection
    from argohosp.synthetic import TERM_LAGS

    terms = tuple(f"term{k + 1:02d}" for k in range(len(TERM_LAGS)))
    return TermSelection(terms, (0.9,) * len(terms)), LagTable(dict(zip(terms, TERM_LAGS)))


@pytest.fixture(scope="session")
def short_run(fixture_bundle, selected):
    """Four Mondays for DC with every method; shared by the backtest tests."""
    import datetime as dt

    from argohosp.backtest import BacktestConfig, run_backtest

    cfg = BacktestConfig(dt.date(2021, 1, 4), dt.date(2021, 1, 25), regions=("DC",))
    diags = []
    records = run_backtest(fixture_bundle, cfg, *selected, diagnostics=diags)
    return cfg, records, diags
