"""Run configuration: a JSON file with every modelling default pre-filled."""

from __future__ import annotations

import datetime as dt
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .backtest import METHODS, BacktestConfig, SolverConfig
from .core_data import REGIONS, Layout

OUTPUT_ENV = "ARGOHOSP_OUTPUT_DIR"
REQUIRED_DATA = ("hospitalizations", "cases", "vaccination", "queries")
DEFAULT_BACKTEST = ("2021-01-04", "2021-12-27")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SelectionConfig:
    start: dt.date = dt.date(2020, 8, 1)
    end: dt.date = dt.date(2020, 12, 31)
    threshold: float = 0.6
    k_max: int = 11
    lag_min: int = 0
    lag_max: int = 21


@dataclass(frozen=True)
class RunConfig:
    base_dir: Path
    data: dict
    layouts: dict
    external: tuple[Path, ...]
    adjacency: Path | None
    selection: SelectionConfig
    backtest: BacktestConfig
    output_dir: Path
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def input_files(self) -> list[Path]:
        files = [self.data[k] for k in REQUIRED_DATA] + list(self.external)
        if self.adjacency is not None:
            files.append(self.adjacency)
        return files

    def echo(self) -> dict:
        """Fully resolved configuration; ``load_config`` accepts it back unchanged."""
        bt = asdict(self.backtest)
        solver = bt.pop("solver")
        bt["start"], bt["end"] = self.backtest.start.isoformat(), self.backtest.end.isoformat()
        bt["regions"], bt["methods"] = list(bt["regions"]), list(bt["methods"])
        sel = asdict(self.selection)
        sel["start"], sel["end"] = self.selection.start.isoformat(), self.selection.end.isoformat()
        data = {k: str(v) for k, v in self.data.items()}
        data["adjacency"] = str(self.adjacency) if self.adjacency else None
        data["external"] = [str(p) for p in self.external]
        return {
            "data": data,
            "layouts": dict(self.layouts),
            "selection": sel,
            "backtest": bt,
            "solver": solver,
            "output_dir": str(self.output_dir),
        }


def _date(value, what):
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError:
        raise ConfigError(f"{what}: not an ISO date: {value!r}") from None


def parse_json(path) -> dict:
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if exc.lineno - 1 < len(text.splitlines()) else ""
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {line}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def load_config(path) -> RunConfig:
    """Parse and type-check a configuration file; raises ConfigError on the first problem."""
    path = Path(path)
    raw = parse_json(path)
    if "config" in raw and "input_sha256" in raw:
        # a run-metadata file: re-run with the recorded configuration
        raw = raw["config"]
    base = path.parent.resolve()

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    data_sec = raw.get("data") or {}
    missing = [k for k in REQUIRED_DATA if k not in data_sec]
    if missing:
        raise ConfigError(f"data: missing paths for {', '.join(missing)}")
    data = {k: resolve(data_sec[k]) for k in REQUIRED_DATA}
    external = tuple(resolve(p) for p in data_sec.get("external", []))
    adjacency = resolve(data_sec["adjacency"]) if data_sec.get("adjacency") else None
    layouts = {k: Layout(raw.get("layouts", {}).get(k, "wide")).value for k in REQUIRED_DATA}

    sel_raw = dict(raw.get("selection") or {})
    if "selection_window" in raw:
        win = raw["selection_window"]
        if not (isinstance(win, list) and len(win) == 2):
            raise ConfigError("selection_window must be [start, end]")
        sel_raw["start"], sel_raw["end"] = win
    sel_defaults = SelectionConfig()
    selection = SelectionConfig(
        start=_date(sel_raw.get("start", sel_defaults.start), "selection_window start"),
        end=_date(sel_raw.get("end", sel_defaults.end), "selection_window end"),
        threshold=float(sel_raw.get("threshold", sel_defaults.threshold)),
        k_max=int(sel_raw.get("k_max", sel_defaults.k_max)),
        lag_min=int(sel_raw.get("lag_min", sel_defaults.lag_min)),
        lag_max=int(sel_raw.get("lag_max", sel_defaults.lag_max)),
    )

    bt = dict(raw.get("backtest") or {})
    sv = dict(raw.get("solver") or {})
    omega = sv.pop("omega", None)
    if omega is not None and "omega" in bt and float(bt["omega"]) != float(omega):
        raise ConfigError("omega given in both backtest and solver with different values")
    defaults = SolverConfig()
    try:
        solver = SolverConfig(
            tol=float(sv.get("tol", defaults.tol)),
            max_iter=int(sv.get("max_iter", defaults.max_iter)),
            grid_size=int(sv.get("grid_size", defaults.grid_size)),
            cv_mode=str(sv.get("cv_mode", defaults.cv_mode)),
            folds=int(sv.get("folds", defaults.folds)),
            seed=int(sv.get("seed", bt.get("seed", defaults.seed))),
        )
        backtest = BacktestConfig(
            start=_date(bt.get("start", DEFAULT_BACKTEST[0]), "backtest start"),
            end=_date(bt.get("end", DEFAULT_BACKTEST[1]), "backtest end"),
            regions=tuple(bt.get("regions", ["US"])),
            methods=tuple(bt.get("methods", METHODS)),
            window=int(bt.get("window", 56)),
            omega=float(bt.get("omega", omega if omega is not None else 0.8)),
            seed=int(bt.get("seed", 0)),
            solver=solver,
            lambda_policy=str(bt.get("lambda_policy", "per_fit")),
            clip=bool(bt.get("clip", True)),
            audit_dir=str(resolve(bt["audit_dir"])) if bt.get("audit_dir") else None,
        )
    except ConfigError:
        raise
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"backtest/solver: {exc}") from None

    out = os.environ.get(OUTPUT_ENV) or raw.get("output_dir", "output")
    return RunConfig(base, data, layouts, external, adjacency, selection, backtest, resolve(out), raw)


def violations(cfg: RunConfig) -> list[str]:
    """Invariant checks that do not need the data contents."""
    out = []
    for p in cfg.input_files:
        if not p.exists():
            out.append(f"missing input file: {p}")
    if cfg.selection.start > cfg.selection.end:
        out.append("selection window start is after its end")
    if cfg.selection.end >= cfg.backtest.start:
        out.append("selection/backtest overlap: selection window must end before the backtest starts")
    if not 0 < cfg.backtest.omega <= 1:
        out.append("omega must lie in (0, 1]")
    sv = cfg.backtest.solver
    if sv.cv_mode not in ("blocked", "random"):
        out.append(f"unknown cv_mode {sv.cv_mode!r}")
    if sv.folds < 2 or cfg.backtest.window < 2 * sv.folds:
        out.append(f"window of {cfg.backtest.window} rows cannot fill {sv.folds} folds of two rows")
    if sv.tol <= 0 or sv.max_iter < 1 or sv.grid_size < 1:
        out.append("solver tol, max_iter and grid_size must be positive")
    if not 0 <= cfg.selection.lag_min <= cfg.selection.lag_max:
        out.append("lag range must satisfy 0 <= lag_min <= lag_max")
    if cfg.selection.k_max < 1:
        out.append("k_max must be positive")
    for r in cfg.backtest.regions:
        if r not in REGIONS:
            out.append(f"unknown region {r}")
    return out
