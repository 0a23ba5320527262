"""Landmark-specific predictive performance and Monte-Carlo cross-validation."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import LongitudinalDataset
from .landmark import LandmarkGrid, ModelSpec, stack
from .model import fit_stacked, fit_static_rmst, predict_crmst, select_stacked
from .pseudo import pseudo_values_crmst

log = logging.getLogger(__name__)

MODELS = ("dynamic", "static")
METRICS = ("c_index", "prediction_error_abs")
WORKERS_ENV = "DYNRMST_WORKERS"


def concordance_counts(predictions, times, statuses, horizon: float | None = None) -> tuple[float, int]:
    """Concordant count (prediction ties count 1/2) and number of comparable pairs.

    A pair is comparable when the shorter time is an observed event; it is
    concordant when that subject also has the smaller prediction. With
    ``horizon`` set, times beyond it are administratively censored there.
    """
    pred = np.asarray(predictions, dtype=float)
    t = np.asarray(times, dtype=float)
    d = np.asarray(statuses).astype(int)
    if not (pred.shape == t.shape == d.shape) or pred.ndim != 1:
        raise ValueError("predictions, times and statuses must be 1-d of equal length")
    if horizon is not None:
        over = t > horizon
        t = np.where(over, horizon, t)
        d = np.where(over, 0, d)
    comparable = (t[:, None] < t[None, :]) & (d[:, None] == 1)
    conc = (pred[:, None] < pred[None, :]) + 0.5 * (pred[:, None] == pred[None, :])
    return float(np.sum(conc * comparable)), int(comparable.sum())


def harrell_c(predictions, times, statuses, horizon: float | None = None) -> float:
    """Harrell's concordance between predicted residual life and observed times."""
    conc, n_pairs = concordance_counts(predictions, times, statuses, horizon)
    if n_pairs == 0:
        raise ValueError("no comparable pairs")
    return conc / n_pairs


def prediction_error(predictions, pseudo_values) -> float:
    """Mean absolute deviation between predictions and pseudo-value responses."""
    pred = np.asarray(predictions, dtype=float)
    pv = np.asarray(pseudo_values, dtype=float)
    if pred.shape != pv.shape:
        raise ValueError("length mismatch")
    if pred.size == 0:
        raise ValueError("empty evaluation sample")
    return float(np.mean(np.abs(pv - pred)))


@dataclass(frozen=True)
class LandmarkMetrics:
    landmark: float
    c_index: float
    prediction_error: float
    n_at_risk: int
    n_comparable_pairs: int


def evaluate_landmark(predictions, data: LongitudinalDataset, ids, s: float, w: float) -> LandmarkMetrics:
    """Metrics at landmark ``s`` for subjects ``ids`` of ``data`` at risk there."""
    idx = [data.subject_ids.index(i) for i in ids]
    t, d = data.times[idx], data.statuses[idx]
    pv = pseudo_values_crmst(t, d, s, w).values
    conc, n_pairs = concordance_counts(predictions, t - s, d, horizon=w)
    c = conc / n_pairs if n_pairs else float("nan")
    return LandmarkMetrics(s, c, prediction_error(predictions, pv), len(ids), n_pairs)


@dataclass(frozen=True)
class CrossValidationReport:
    """Per-landmark means over replicates; ``replicates[model][metric]`` is (reps, L)."""

    reps: int
    train_fraction: float
    seed: int
    stratify: bool
    landmarks: np.ndarray
    replicates: dict
    failed: tuple[int, ...] = ()
    skipped: int = 0
    specs: tuple = field(default=(), repr=False)

    def mean(self, model: str, metric: str) -> np.ndarray:
        with np.errstate(all="ignore"):
            vals = self.replicates[model][metric]
            ok = ~np.isnan(vals)
            return np.where(ok.any(axis=0), np.nansum(vals, axis=0) / np.maximum(ok.sum(axis=0), 1), np.nan)

    def count(self, model: str, metric: str) -> np.ndarray:
        return (~np.isnan(self.replicates[model][metric])).sum(axis=0)

    def rows(self) -> list[dict]:
        out = []
        for k, s in enumerate(self.landmarks):
            for m in MODELS:
                for metric in METRICS:
                    out.append(dict(landmark=float(s), model=m, metric=metric,
                                    mean=float(self.mean(m, metric)[k]),
                                    n_replicates=int(self.count(m, metric)[k])))
        return out


def split_subjects(data: LongitudinalDataset, train_fraction: float, rng: np.random.Generator,
                   stratify: bool = True) -> tuple[list[str], list[str]]:
    """Random subject-level split; optionally stratified on event status."""
    ids = np.array(data.subject_ids, dtype=object)
    groups = [np.flatnonzero(data.statuses == v) for v in (0, 1)] if stratify else [np.arange(len(ids))]
    train = []
    for g in groups:
        perm = rng.permutation(g)
        train.extend(perm[: int(round(train_fraction * len(g)))].tolist())
    mask = np.zeros(len(ids), dtype=bool)
    mask[train] = True
    return [i for i in ids[mask]], [i for i in ids[~mask]]


def _replicate(args):
    data, grid, spec, select, variance, train_fraction, seed, rep, stratify = args
    rng = np.random.default_rng([seed, rep])
    train_ids, test_ids = split_subjects(data, train_fraction, rng, stratify)
    train, test = data.subset(train_ids), data.subset(test_ids)
    L = len(grid.landmarks)
    res = {m: {k: np.full(L, np.nan) for k in METRICS} for m in MODELS}
    stacked = stack(train, grid)
    if select:
        model = select_stacked(stacked, spec, variance).model
    else:
        model = fit_stacked(stacked, spec, variance)
    skipped = 0
    for k, s in enumerate(grid.landmarks):
        s = float(s)
        ids = test.at_risk(s)
        if len(ids) < 2:
            skipped += 1
            continue
        z = test.encoded_at(ids, s)
        dyn = np.array([predict_crmst(model, row, s) for row in z])
        static = fit_static_rmst(train, s + grid.window)
        z0 = test.encoded_at(ids, 0.0)
        # a subject alive at s has RMST(s + w) = s + m(s, w)
        stat = np.array([static.predict(row) for row in z0]) - s
        for name, pred in (("dynamic", dyn), ("static", stat)):
            m = evaluate_landmark(pred, test, ids, s, grid.window)
            res[name]["c_index"][k] = m.c_index
            res[name]["prediction_error_abs"][k] = m.prediction_error
    return res, skipped, model.spec


def monte_carlo_cv(
    data: LongitudinalDataset,
    grid: LandmarkGrid,
    spec: ModelSpec | None = None,
    select: bool = True,
    reps: int = 200,
    train_fraction: float = 0.7,
    seed: int = 0,
    stratify: bool = True,
    variance: str = "row",
    workers: int | None = None,
) -> CrossValidationReport:
    """Repeated random train/test splits comparing the dynamic and static models.

    Replicate ``r`` draws its split from ``default_rng([seed, r])``, so results
    do not depend on the number of workers. ``spec`` is the starting spec when
    ``select`` is true, otherwise the fixed spec to fit.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    if spec is None:
        spec = ModelSpec.uniform(data.schema.columns, 2 if select else 0)
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    jobs = [(data, grid, spec, select, variance, train_fraction, seed, r, stratify) for r in range(reps)]
    outcomes = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_replicate, j) for j in jobs]
            for r, fut in enumerate(futures):
                try:
                    outcomes.append(fut.result())
                except (ValueError, np.linalg.LinAlgError) as exc:
                    log.warning("replicate %d failed: %s", r, exc)
                    outcomes.append(None)
    else:
        for r, j in enumerate(jobs):
            try:
                outcomes.append(_replicate(j))
            except (ValueError, np.linalg.LinAlgError) as exc:
                log.warning("replicate %d failed: %s", r, exc)
                outcomes.append(None)

    L = len(grid.landmarks)
    table = {m: {k: np.full((reps, L), np.nan) for k in METRICS} for m in MODELS}
    failed, skipped, specs = [], 0, []
    for r, out in enumerate(outcomes):
        if out is None:
            failed.append(r)
            continue
        res, sk, sp = out
        skipped += sk
        specs.append(sp)
        for m in MODELS:
            for k in METRICS:
                table[m][k][r] = res[m][k]
    return CrossValidationReport(
        reps=reps, train_fraction=train_fraction, seed=seed, stratify=stratify,
        landmarks=grid.landmarks, replicates=table, failed=tuple(failed),
        skipped=skipped, specs=tuple(specs),
    )
