"""Command-line entry point: ``dynrmst summary|fit|predict|evaluate|curves``."""

from __future__ import annotations

import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from functools import wraps
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Iterable

import click
import numpy as np
import yaml

from .dataset import DataError, SchemaError, load_schema, parse_longitudinal, summarize
from .evaluation import monte_carlo_cv
from .landmark import LandmarkGrid, ModelSpec, stack
from .model import (
    VARIANCES,
    FittedDynamicModel,
    RankDeficientError,
    coefficient_curve,
    fit_stacked,
    fit_static_rmst,
    predict_crmst,
    select_stacked,
)

EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5

log = logging.getLogger("dynrmst")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Resolved run parameters; defaults reproduce the published PBC analysis."""

    data: Path
    schema: Path
    window: float = 5.0
    grid_start: float = 0.0
    grid_stop: float = 5.0
    grid_step: float = 0.2
    selection: bool = True
    degrees: dict = field(default_factory=dict)
    variance: str = "row"
    static_tau: float | None = 10.0
    cv_reps: int = 200
    cv_train_fraction: float = 0.7
    cv_seed: int = 2021
    cv_stratify: bool = True
    out: Path = Path("runs")
    clamp: bool = False

    def __post_init__(self):
        if not self.window > 0:
            raise ConfigError("window must be positive")
        if self.cv_reps < 1:
            raise ConfigError("cv reps must be >= 1")
        if not 0 < self.cv_train_fraction < 1:
            raise ConfigError("cv train_fraction must lie in (0, 1)")
        if self.static_tau is not None and not self.static_tau > 0:
            raise ConfigError("static_tau must be positive")
        if self.variance not in VARIANCES:
            raise ConfigError(f"variance must be one of {VARIANCES}")
        try:
            self.grid
            ModelSpec(self.degrees)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def grid(self) -> LandmarkGrid:
        return LandmarkGrid(self.grid_start, self.grid_stop, self.grid_step, self.window)

    def as_dict(self) -> dict:
        d = asdict(self)
        for k in ("data", "schema", "out"):
            d[k] = str(d[k])
        return d


def load_config(path: str | Path, **overrides: Any) -> RunConfig:
    """Read a YAML run config; paths inside are relative to the config file."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    base = path.parent
    for key in ("data", "schema"):
        if key not in raw:
            raise ConfigError(f"config lacks required key {key!r}")
    grid = raw.get("grid", {})
    if isinstance(grid, str):
        try:
            g = LandmarkGrid.parse(grid)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        grid = {"start": g.start, "stop": g.stop, "step": g.step}
    cv = raw.get("cv", {}) or {}
    try:
        kw = dict(
            data=base / raw["data"],
            schema=base / raw["schema"],
            window=float(raw.get("window", 5.0)),
            grid_start=float(grid.get("start", 0.0)),
            grid_stop=float(grid.get("stop", 5.0)),
            grid_step=float(grid.get("step", 0.2)),
            selection=bool(raw.get("selection", True)),
            degrees={str(k): int(v) for k, v in (raw.get("degrees") or {}).items()},
            variance=str(raw.get("variance", "row")),
            static_tau=None if raw.get("static_tau", 10.0) is None else float(raw.get("static_tau", 10.0)),
            cv_reps=int(cv.get("reps", 200)),
            cv_train_fraction=float(cv.get("train_fraction", 0.7)),
            cv_seed=int(cv.get("seed", 2021)),
            cv_stratify=bool(cv.get("stratify", True)),
            out=base / raw.get("out", "runs"),
            clamp=bool(raw.get("clamp", False)),
        )
    except (TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"bad config value: {exc}") from None
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**kw)


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def write_table(path: Path, header: list[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_metadata(out: Path, command: str, cfg: RunConfig, **extra) -> None:
    try:
        pkg_version = version("artifact")
    except PackageNotFoundError:
        pkg_version = "unknown"
    meta = {
        "command": command,
        "config": cfg.as_dict(),
        "versions": {"dynrmst": pkg_version, "numpy": np.__version__},
        **extra,
    }
    (out / f"{command}.meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def _load_data(cfg: RunConfig):
    schema = load_schema(cfg.schema)
    return parse_longitudinal(cfg.data, schema)


def _outdir(cfg: RunConfig) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg.out


def _guard(fn):
    """Map library exceptions onto the documented exit codes."""

    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, SchemaError) as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (DataError, FileNotFoundError) as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(EXIT_DATA)
        except (RankDeficientError, np.linalg.LinAlgError) as exc:
            click.echo(f"numeric failure: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)
        except (ValueError, KeyError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_DATA)

    return wrapper


def _grid_option(text):
    if text is None:
        return {}
    try:
        g = LandmarkGrid.parse(text)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return dict(grid_start=g.start, grid_stop=g.stop, grid_step=g.step)


def common_options(fn):
    fn = click.option("--clamp", is_flag=True, default=False, help="Clamp predictions to [0, w].")(fn)
    fn = click.option("--no-select", "no_select", is_flag=True, default=False,
                      help="Skip interaction selection; use config degrees.")(fn)
    fn = click.option("--tau", type=float, help="Static RMST horizon.")(fn)
    fn = click.option("--grid", "grid", help="Landmark grid S0:SL:STEP.")(fn)
    fn = click.option("--window", type=float, help="Prediction window w (years).")(fn)
    fn = click.option("--reps", type=int, help="Cross-validation replicates.")(fn)
    fn = click.option("--seed", type=int, help="Cross-validation seed.")(fn)
    fn = click.option("--out", type=click.Path(file_okay=False, path_type=Path), help="Output directory.")(fn)
    fn = click.option("--config", "config", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path),
                      help="YAML run configuration.")(fn)
    return fn


def resolve(config, out, seed, reps, window, grid, tau, no_select, clamp) -> RunConfig:
    overrides = dict(out=out, cv_seed=seed, cv_reps=reps, window=window, static_tau=tau,
                     clamp=True if clamp else None)
    overrides.update(_grid_option(grid))
    if no_select:
        overrides["selection"] = False
    return load_config(config, **overrides)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Dynamic prediction of conditional restricted mean survival time."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@common_options
@_guard
def summary(**opts):
    """Descriptive statistics and Kaplan-Meier survival at 5 and 10 years."""
    cfg = resolve(**opts)
    data = _load_data(cfg)
    summ = summarize(data)
    out = _outdir(cfg)
    rows = summ.rows()
    write_table(out / "summary.csv", ["statistic", "value"], rows)
    write_metadata(out, "summary", cfg)
    for k, v in rows:
        click.echo(f"{k:24s} {v}")


def _fit(cfg: RunConfig, data):
    stacked = stack(data, cfg.grid)
    if cfg.selection:
        start = ModelSpec({**ModelSpec.uniform(stacked.columns, 2).degrees, **cfg.degrees})
        res = select_stacked(stacked, start, cfg.variance)
        return res.model, res.trail, stacked
    spec = ModelSpec({c: cfg.degrees.get(c, 0) for c in stacked.columns})
    return fit_stacked(stacked, spec, cfg.variance), [], stacked


@main.command()
@common_options
@click.option("--export-stacked", is_flag=True, help="Also write the stacked landmark dataset.")
@_guard
def fit(export_stacked, **opts):
    """Fit the dynamic model (and the static comparator) and write coefficient tables."""
    cfg = resolve(**opts)
    data = _load_data(cfg)
    model, trail, stacked = _fit(cfg, data)
    out = _outdir(cfg)
    model.save(out / "model.json")
    write_table(
        out / "coefficients.csv",
        ["term", "time_function", "coefficient", "se", "z", "p"],
        ([r["term"], r["time_function"], r["coefficient"], r["se"], r["z"], r["p"]] for r in model.table()),
    )
    if trail:
        write_table(
            out / "selection.csv",
            ["stage", "term", "power", "coefficient", "se", "z", "p", "decision"],
            ([t["stage"], t["column"], t["power"], t["coefficient"], t["se"], t["z"], t["p"], t["decision"]]
             for t in trail),
        )
    if export_stacked:
        with open(out / "stacked.csv", "w", newline="", encoding="utf-8") as fh:
            stacked.write_csv(fh)
    if cfg.static_tau is not None:
        static = fit_static_rmst(data, cfg.static_tau)
        write_table(
            out / "static.csv",
            ["term", "coefficient", "ci_lower", "ci_upper", "z", "p"],
            ([r["term"], r["coefficient"], r["ci_lower"], r["ci_upper"], r["z"], r["p"]] for r in static.table()),
        )
    write_metadata(out, "fit", cfg, degrees=dict(model.spec.degrees), n_rows=model.n_rows)
    for r in model.table():
        click.echo(f"{r['term']:18s} {r['time_function']:9s} {r['coefficient']:9.3f} {r['se']:7.3f} {r['p']:7.3f}")


def _parse_times(text: str) -> list[float]:
    if ":" in text:
        g = LandmarkGrid.parse(text)
        return [float(s) for s in g.landmarks]
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad prediction times {text!r}") from None


@main.command()
@common_options
@click.option("--model", "model_path", type=click.Path(dir_okay=False, path_type=Path),
              help="Model file (default: OUT/model.json).")
@click.option("--patients", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Patient visit records in the ingestion format (default: config data).")
@click.option("--ids", help="Comma-separated subject ids to predict for.")
@click.option("--at", "at", default="0:5:0.2", show_default=True, help="Prediction times: list or S0:SL:STEP.")
@click.option("--static", "with_static", is_flag=True, help="Add the static (s+w)-year RMST comparator.")
@_guard
def predict(model_path, patients, ids, at, with_static, **opts):
    """Predicted w-year cRMST trajectories for individual patients."""
    cfg = resolve(**opts)
    out = _outdir(cfg)
    model = FittedDynamicModel.load(model_path or out / "model.json")
    schema = load_schema(cfg.schema)
    records = parse_longitudinal(patients or cfg.data, schema, require_outcome=False)
    wanted = records.subject_ids if ids is None else [i.strip() for i in ids.split(",")]
    missing = [i for i in wanted if i not in records.subject_ids]
    if missing:
        raise DataError(f"unknown subject ids: {missing}")
    times = _parse_times(at)
    statics = {}
    if with_static:
        data = _load_data(cfg)
        statics = {s: fit_static_rmst(data, s + model.window) for s in times}
    rows = []
    for sid in wanted:
        for s in times:
            z = records.encoded_at([sid], s)[0]
            m = predict_crmst(model, z, s)
            if cfg.clamp:
                m = min(max(m, 0.0), model.window)
            row = [sid, s, m]
            if with_static:
                row.append(statics[s].predict(records.encoded_at([sid], 0.0)[0]))
            rows.append(row)
    header = ["subject_id", "s", "crmst"] + (["static_rmst"] if with_static else [])
    write_table(out / "predictions.csv", header, rows)
    write_metadata(out, "predict", cfg, times=times, subjects=list(wanted))
    for row in rows:
        click.echo("  ".join(f"{x:8.3f}" if isinstance(x, float) else f"{x:>6}" for x in row))


@main.command()
@common_options
@_guard
def evaluate(**opts):
    """Monte-Carlo cross-validated C-index and prediction error per landmark."""
    cfg = resolve(**opts)
    data = _load_data(cfg)
    start = None
    if cfg.degrees:
        start = ModelSpec({c: cfg.degrees.get(c, 2 if cfg.selection else 0) for c in data.schema.columns})
    report = monte_carlo_cv(
        data, cfg.grid, start, select=cfg.selection, reps=cfg.cv_reps,
        train_fraction=cfg.cv_train_fraction, seed=cfg.cv_seed, stratify=cfg.cv_stratify,
        variance=cfg.variance,
    )
    out = _outdir(cfg)
    rows = report.rows()
    write_table(out / "metrics.csv", ["landmark", "model", "metric", "mean", "n_replicates"],
                ([r["landmark"], r["model"], r["metric"], r["mean"], r["n_replicates"]] for r in rows))
    rep_rows = []
    for model_name, metrics in report.replicates.items():
        for metric, values in metrics.items():
            for r in range(values.shape[0]):
                for k, s in enumerate(report.landmarks):
                    rep_rows.append([r, float(s), model_name, metric, float(values[r, k])])
    write_table(out / "replicates.csv", ["replicate", "landmark", "model", "metric", "value"], rep_rows)
    write_metadata(out, "evaluate", cfg, failed_replicates=list(report.failed), skipped_landmarks=report.skipped)
    if report.failed:
        click.echo(f"warning: {len(report.failed)} replicate(s) failed and were excluded", err=True)
    click.echo(f"{'s':>5} {'C dyn':>7} {'C static':>8} {'PE dyn':>7} {'PE static':>9}")
    cd, cs = report.mean("dynamic", "c_index"), report.mean("static", "c_index")
    pd_, ps = report.mean("dynamic", "prediction_error_abs"), report.mean("static", "prediction_error_abs")
    for k, s in enumerate(report.landmarks):
        click.echo(f"{s:5.1f} {cd[k]:7.3f} {cs[k]:8.3f} {pd_[k]:7.3f} {ps[k]:9.3f}")


@main.command()
@common_options
@click.option("--model", "model_path", type=click.Path(dir_okay=False, path_type=Path),
              help="Model file (default: OUT/model.json).")
@click.option("--covariate", "covariates", multiple=True, help="Restrict to these design columns.")
@click.option("--points", default=101, show_default=True, type=click.IntRange(min=2))
@_guard
def curves(model_path, covariates, points, **opts):
    """Dynamic coefficient curves with pointwise 95% confidence bands."""
    cfg = resolve(**opts)
    out = _outdir(cfg)
    model = FittedDynamicModel.load(model_path or out / "model.json")
    names = list(covariates) or list(dict.fromkeys(t for t, _ in model.terms))
    s_grid = np.linspace(model.grid.start, model.grid.stop, points)
    rows = []
    for name in names:
        c = coefficient_curve(model, name, s_grid)
        rows.extend([name, float(s), float(p), float(lo), float(hi)]
                    for s, p, lo, hi in zip(c.s, c.point, c.lower, c.upper))
    write_table(out / "curves.csv", ["term", "s", "point", "lower", "upper"], rows)
    write_metadata(out, "curves", cfg, terms=names, points=points)
    click.echo(f"wrote {len(rows)} rows for {len(names)} term(s) to {out / 'curves.csv'}")


if __name__ == "__main__":
    main()
