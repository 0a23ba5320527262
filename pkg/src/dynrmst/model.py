"""Least-squares fitting of the landmark supermodel and the static RMST comparator."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import norm

from .dataset import LongitudinalDataset
from .landmark import (
    INTERCEPT,
    LandmarkGrid,
    ModelSpec,
    StackedLandmarkDataset,
    design_matrix,
    stack,
    time_label,
)
from .pseudo import pseudo_values_rmst

log = logging.getLogger(__name__)

MODEL_FORMAT = "dynrmst-model"
MODEL_VERSION = 1
VARIANCES = ("row", "subject")


class RankDeficientError(ValueError):
    """The design matrix does not have full column rank."""


@dataclass(frozen=True)
class LeastSquaresFit:
    coef: np.ndarray
    cov: np.ndarray
    residuals: np.ndarray
    n_rows: int
    n_clusters: int

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))


def fit_clustered_ls(response, matrix, clusters=None, labels: Sequence[str] | None = None) -> LeastSquaresFit:
    """OLS by Householder QR with a cluster-robust sandwich covariance.

    Score contributions ``x_i * r_i`` are summed within clusters; with
    ``clusters=None`` every row is its own cluster (HC0).
    """
    y = np.asarray(response, dtype=float)
    X = np.asarray(matrix, dtype=float)
    n, p = X.shape
    if n < p:
        raise RankDeficientError(f"fewer rows ({n}) than columns ({p})")
    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    tol = max(n, p) * np.finfo(float).eps * (diag.max() if p else 1.0) * 1e3
    bad = np.flatnonzero(diag <= tol)
    if bad.size:
        name = labels[bad[0]] if labels is not None else f"column {bad[0]}"
        raise RankDeficientError(f"design is rank deficient: {name} is linearly dependent")
    coef = solve_triangular(r, q.T @ y)
    resid = y - X @ coef
    r_inv = solve_triangular(r, np.eye(p))
    bread = r_inv @ r_inv.T
    scores = X * resid[:, None]
    if clusters is None:
        meat = scores.T @ scores
        n_clusters = n
    else:
        _, inv = np.unique(np.asarray(clusters), return_inverse=True)
        summed = np.zeros((inv.max() + 1, p))
        np.add.at(summed, inv, scores)
        meat = summed.T @ summed
        n_clusters = summed.shape[0]
    cov = bread @ meat @ bread
    return LeastSquaresFit(coef, (cov + cov.T) / 2, resid, n, n_clusters)


def _p_values(z: np.ndarray) -> np.ndarray:
    return 2.0 * norm.sf(np.abs(z))


@dataclass(frozen=True)
class CoefficientCurve:
    column: str
    s: np.ndarray
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def se(self) -> np.ndarray:
        return (self.upper - self.point) / norm.ppf(0.975)


@dataclass(frozen=True)
class FittedDynamicModel:
    """Coefficients over (term, power) pairs; power p multiplies by s̄**p."""

    spec: ModelSpec
    terms: tuple[tuple[str, int], ...]
    coef: np.ndarray
    cov: np.ndarray
    grid: LandmarkGrid
    columns: tuple[str, ...]
    variance: str = "row"
    n_rows: int = 0
    n_clusters: int = 0

    @property
    def window(self) -> float:
        return self.grid.window

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    @property
    def z(self) -> np.ndarray:
        return self.coef / self.se

    @property
    def p_values(self) -> np.ndarray:
        return _p_values(self.z)

    @property
    def labels(self) -> list[str]:
        return [t if p == 0 else f"{t}:s^{p}" for t, p in self.terms]

    def index(self, term: str, power: int) -> int:
        return self.terms.index((term, power))

    def degree(self, term: str) -> int:
        powers = [p for t, p in self.terms if t == term]
        if not powers:
            raise KeyError(f"{term!r} is not in the model")
        return max(powers)

    def basis(self, z: np.ndarray, s: float) -> np.ndarray:
        """Design row for encoded covariates ``z`` (``columns`` order) at time ``s``."""
        sb = self.grid.standardize(s)
        pos = {c: k for k, c in enumerate(self.columns)}
        return np.array(
            [(1.0 if t == INTERCEPT else z[pos[t]]) * sb**p for t, p in self.terms]
        )

    def table(self) -> list[dict]:
        """One row per coefficient: term, time function, estimate, SE, Z, P."""
        out = []
        for (t, p), b, se, z, pv in zip(self.terms, self.coef, self.se, self.z, self.p_values):
            out.append(
                dict(term=t, time_function=time_label(p, self.grid.span), coefficient=b, se=se, z=z, p=pv)
            )
        return out

    def to_dict(self) -> dict:
        g = self.grid
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "grid": {"start": g.start, "stop": g.stop, "step": g.step, "window": g.window},
            "spec": {"degrees": dict(self.spec.degrees), "intercept_degree": self.spec.intercept_degree},
            "columns": list(self.columns),
            "terms": [[t, p] for t, p in self.terms],
            "coef": self.coef.tolist(),
            "cov": self.cov.tolist(),
            "variance": self.variance,
            "n_rows": self.n_rows,
            "n_clusters": self.n_clusters,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FittedDynamicModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError("not a dynrmst model file")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model file version {d.get('version')}")
        return cls(
            spec=ModelSpec(dict(d["spec"]["degrees"]), d["spec"]["intercept_degree"]),
            terms=tuple((t, int(p)) for t, p in d["terms"]),
            coef=np.array(d["coef"], dtype=float),
            cov=np.array(d["cov"], dtype=float),
            grid=LandmarkGrid(**d["grid"]),
            columns=tuple(d["columns"]),
            variance=d["variance"],
            n_rows=d["n_rows"],
            n_clusters=d["n_clusters"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FittedDynamicModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_stacked(stacked: StackedLandmarkDataset, spec: ModelSpec, variance: str = "row") -> FittedDynamicModel:
    if variance not in VARIANCES:
        raise ValueError(f"variance must be one of {VARIANCES}, got {variance!r}")
    design = design_matrix(stacked, spec)
    clusters = design.clusters if variance == "subject" else None
    fit = fit_clustered_ls(design.response, design.matrix, clusters, design.labels)
    return FittedDynamicModel(
        spec=spec,
        terms=design.terms,
        coef=fit.coef,
        cov=fit.cov,
        grid=stacked.grid,
        columns=stacked.columns,
        variance=variance,
        n_rows=fit.n_rows,
        n_clusters=len(np.unique(design.clusters)),
    )


def fit_dynamic(
    data: LongitudinalDataset,
    grid: LandmarkGrid,
    spec: ModelSpec | None = None,
    variance: str = "row",
) -> FittedDynamicModel:
    """Stack the landmark datasets over ``grid`` and fit the supermodel.

    ``variance="row"`` treats stacked rows as independent (HC0); ``"subject"``
    clusters the sandwich on subject across landmarks. The default spec has
    main effects only.
    """
    stacked = stack(data, grid)
    if spec is None:
        spec = ModelSpec.uniform(stacked.columns, 0)
    return fit_stacked(stacked, spec, variance)


@dataclass(frozen=True)
class SelectionResult:
    spec: ModelSpec
    model: FittedDynamicModel
    trail: list[dict] = field(default_factory=list)


def _wald(model: FittedDynamicModel, column: str, power: int) -> tuple[float, float, float, float]:
    k = model.index(column, power)
    b, se = model.coef[k], model.se[k]
    z = b / se
    return b, se, z, float(_p_values(np.array([z]))[0])


def select_stacked(
    stacked: StackedLandmarkDataset,
    start: ModelSpec | None = None,
    variance: str = "row",
    alpha: float = 0.05,
) -> SelectionResult:
    """Backward selection of time interactions by two-sided Wald tests.

    Stage 1 tests every quadratic term and demotes non-significant ones to
    linear. Stage 2 refits and tests the linear term of each demoted column,
    demoting non-significant ones to constant. Columns whose quadratic term
    survived keep it together with their linear term. A final refit follows.
    """
    spec = start if start is not None else ModelSpec.uniform(stacked.columns, 2)
    trail: list[dict] = []

    def record(stage, column, power, stats, keep):
        b, se, z, p = stats
        trail.append(dict(stage=stage, column=column, power=power, coefficient=b, se=se, z=z, p=p,
                          decision="keep" if keep else "drop"))
        log.info("stage %d %s s^%d: coef=%.4f se=%.4f p=%.4f -> %s",
                 stage, column, power, b, se, p, "keep" if keep else "drop")

    model = fit_stacked(stacked, spec, variance)
    demoted = []
    changes = {}
    for col, d in spec.degrees.items():
        if d == 2:
            stats = _wald(model, col, 2)
            keep = stats[3] < alpha
            record(1, col, 2, stats, keep)
            if not keep:
                changes[col] = 1
                demoted.append(col)
        elif d == 1:
            demoted.append(col)
    spec = spec.replace(**changes)

    model = fit_stacked(stacked, spec, variance)
    changes = {}
    for col in demoted:
        stats = _wald(model, col, 1)
        keep = stats[3] < alpha
        record(2, col, 1, stats, keep)
        if not keep:
            changes[col] = 0
    spec = spec.replace(**changes)
    model = fit_stacked(stacked, spec, variance)
    return SelectionResult(spec, model, trail)


def select_interactions(
    data: LongitudinalDataset,
    grid: LandmarkGrid,
    start: ModelSpec | None = None,
    variance: str = "row",
    alpha: float = 0.05,
) -> SelectionResult:
    return select_stacked(stack(data, grid), start, variance, alpha)


def _encode_input(model, covariates) -> np.ndarray:
    if isinstance(covariates, Mapping):
        missing = [c for c in model.columns if c not in covariates]
        if missing:
            raise ValueError(f"covariates missing: {missing}")
        return np.array([float(covariates[c]) for c in model.columns])
    z = np.asarray(covariates, dtype=float)
    if z.shape != (len(model.columns),):
        raise ValueError(f"expected {len(model.columns)} encoded covariates, got shape {z.shape}")
    return z


def predict_crmst(model: FittedDynamicModel, covariates, s: float) -> float:
    """Predicted m(s, w) = α(s̄) + Σ_j Z_j β_j(s̄); not clamped to [0, w].

    ``covariates`` is an encoded vector in ``model.columns`` order or a mapping
    from column name to encoded value.
    """
    if not model.grid.contains(s):
        raise ValueError(
            f"prediction time outside grid: s={s} not in [{model.grid.start}, {model.grid.stop}]"
        )
    z = _encode_input(model, covariates)
    return float(model.basis(z, s) @ model.coef)


def coefficient_curve(model: FittedDynamicModel, column: str, s_values, level: float = 0.95) -> CoefficientCurve:
    """β_j(s) with pointwise CIs from the quadratic form cᵀVc."""
    if column != INTERCEPT and column not in model.columns:
        raise KeyError(f"unknown covariate column {column!r}")
    idx = [k for k, (t, _) in enumerate(model.terms) if t == column]
    if not idx:
        raise KeyError(f"{column!r} is not in the model")
    powers = np.array([model.terms[k][1] for k in idx])
    s = np.asarray(s_values, dtype=float)
    sb = np.atleast_1d(model.grid.standardize(s))
    contrast = sb[:, None] ** powers[None, :]
    point = contrast @ model.coef[idx]
    sub = model.cov[np.ix_(idx, idx)]
    se = np.sqrt(np.einsum("ij,jk,ik->i", contrast, sub, contrast))
    q = norm.ppf(0.5 + level / 2)
    return CoefficientCurve(column, s, point, point - q * se, point + q * se)


@dataclass(frozen=True)
class FittedStaticModel:
    tau: float
    terms: tuple[str, ...]
    coef: np.ndarray
    cov: np.ndarray
    columns: tuple[str, ...]

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    @property
    def z(self) -> np.ndarray:
        return self.coef / self.se

    @property
    def p_values(self) -> np.ndarray:
        return _p_values(self.z)

    def ci(self, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
        q = norm.ppf(0.5 + level / 2)
        return self.coef - q * self.se, self.coef + q * self.se

    def predict(self, covariates) -> float:
        """Predicted RMST(tau) from baseline covariates."""
        z = _encode_input(self, covariates)
        pos = {c: k for k, c in enumerate(self.columns)}
        row = np.array([1.0 if t == INTERCEPT else z[pos[t]] for t in self.terms])
        return float(row @ self.coef)

    def table(self) -> list[dict]:
        lo, hi = self.ci()
        return [
            dict(term=t, coefficient=b, ci_lower=l, ci_upper=h, z=z, p=p)
            for t, b, l, h, z, p in zip(self.terms, self.coef, lo, hi, self.z, self.p_values)
        ]


def fit_static_rmst(
    data: LongitudinalDataset, tau: float, columns: Sequence[str] | None = None
) -> FittedStaticModel:
    """RMST(tau) regression on baseline covariates with pseudo-value response and HC0 SEs."""
    all_cols = tuple(data.schema.columns)
    cols = all_cols if columns is None else tuple(columns)
    unknown = set(cols) - set(all_cols)
    if unknown:
        raise ValueError(f"unknown covariate columns: {sorted(unknown)}")
    pv = pseudo_values_rmst(data.times, data.statuses, tau, data.subject_ids)
    z = data.encoded_at(data.subject_ids, 0.0)
    keep = [all_cols.index(c) for c in cols]
    X = np.column_stack([np.ones(len(pv.values)), z[:, keep]])
    terms = (INTERCEPT, *cols)
    fit = fit_clustered_ls(pv.values, X, None, terms)
    return FittedStaticModel(float(tau), terms, fit.coef, fit.cov, all_cols)
