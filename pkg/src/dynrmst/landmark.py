"""Landmark datasets, the stacked super dataset and the time-interaction design."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping

import numpy as np

from .dataset import LongitudinalDataset
from .pseudo import pseudo_values_crmst

INTERCEPT = "(Intercept)"


@dataclass(frozen=True)
class LandmarkGrid:
    """Equidistant landmarks ``start, start + step, ..., stop`` with window ``window``."""

    start: float = 0.0
    stop: float = 5.0
    step: float = 0.2
    window: float = 5.0

    def __post_init__(self):
        if self.start < 0:
            raise ValueError("grid start must be >= 0")
        if not self.step > 0:
            raise ValueError("grid step must be positive")
        if self.stop < self.start:
            raise ValueError("grid stop must be >= start")
        if not self.window > 0:
            raise ValueError("window must be positive")
        n = (self.stop - self.start) / self.step
        if abs(n - round(n)) > 1e-8:
            raise ValueError("grid span is not a whole number of steps")

    @classmethod
    def parse(cls, text: str, window: float = 5.0) -> "LandmarkGrid":
        """Parse ``"S0:SL:STEP"``."""
        try:
            start, stop, step = (float(x) for x in text.split(":"))
        except ValueError:
            raise ValueError(f"grid must look like S0:SL:STEP, got {text!r}") from None
        return cls(start, stop, step, window)

    @property
    def landmarks(self) -> np.ndarray:
        n = int(round((self.stop - self.start) / self.step))
        return np.round(self.start + self.step * np.arange(n + 1), 10)

    @property
    def span(self) -> float:
        return self.stop - self.start

    def standardize(self, s):
        """s / (s_L - s_0); zero for a single-point grid."""
        s = np.asarray(s, dtype=float)
        out = s / self.span if self.span > 0 else np.zeros_like(s)
        return float(out) if out.ndim == 0 else out

    def contains(self, s: float) -> bool:
        return self.start - 1e-9 <= s <= self.stop + 1e-9


@dataclass(frozen=True)
class LandmarkRow:
    subject_id: str
    landmark: float
    sbar: float
    covariates: np.ndarray
    pseudo_value: float


@dataclass(frozen=True)
class StackedLandmarkDataset:
    """All landmark blocks, row order by landmark then subject order of the source."""

    grid: LandmarkGrid
    columns: tuple[str, ...]
    subject_ids: np.ndarray
    landmark: np.ndarray
    sbar: np.ndarray
    covariates: np.ndarray
    pseudo_value: np.ndarray

    def __len__(self):
        return len(self.pseudo_value)

    def block_sizes(self) -> dict[float, int]:
        return {float(s): int(np.sum(self.landmark == s)) for s in self.grid.landmarks}

    def restrict(self, s: float) -> "StackedLandmarkDataset":
        m = self.landmark == s
        return StackedLandmarkDataset(
            self.grid, self.columns, self.subject_ids[m], self.landmark[m], self.sbar[m],
            self.covariates[m], self.pseudo_value[m],
        )

    def rows(self) -> Iterable[LandmarkRow]:
        for k in range(len(self)):
            yield LandmarkRow(
                self.subject_ids[k], float(self.landmark[k]), float(self.sbar[k]),
                self.covariates[k], float(self.pseudo_value[k]),
            )

    def write_csv(self, stream: IO[str]) -> None:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["subject_id", "s", "sbar", *self.columns, "pseudo_value"])
        for k in range(len(self)):
            w.writerow(
                [self.subject_ids[k], repr(float(self.landmark[k])), repr(float(self.sbar[k]))]
                + [repr(float(x)) for x in self.covariates[k]]
                + [repr(float(self.pseudo_value[k]))]
            )


def _block(data: LongitudinalDataset, s: float, w: float):
    mask = data.times > s
    ids = [i for i, m in zip(data.subject_ids, mask) if m]
    if len(ids) < 2:
        raise ValueError(f"fewer than 2 subjects at risk at landmark s={s}")
    pv = pseudo_values_crmst(data.times[mask], data.statuses[mask], s, w, ids)
    return ids, data.encoded_at(ids, s), pv.values


def build_landmark_dataset(data: LongitudinalDataset, s: float, w: float, grid: LandmarkGrid | None = None) -> list[LandmarkRow]:
    """Rows for the subjects still at risk (outcome time > s) at landmark ``s``."""
    if not w > 0:
        raise ValueError("window must be positive")
    ids, z, pv = _block(data, s, w)
    sbar = grid.standardize(s) if grid is not None else 0.0
    return [LandmarkRow(i, float(s), sbar, z[k], float(pv[k])) for k, i in enumerate(ids)]


def stack(data: LongitudinalDataset, grid: LandmarkGrid) -> StackedLandmarkDataset:
    """Concatenate the landmark blocks over the grid."""
    ids, s_col, z_blocks, pv_blocks = [], [], [], []
    for s in grid.landmarks:
        b_ids, z, pv = _block(data, float(s), grid.window)
        ids.extend(b_ids)
        s_col.append(np.full(len(b_ids), s))
        z_blocks.append(z)
        pv_blocks.append(pv)
    s_arr = np.concatenate(s_col)
    return StackedLandmarkDataset(
        grid=grid,
        columns=tuple(data.schema.columns),
        subject_ids=np.array(ids, dtype=object),
        landmark=s_arr,
        sbar=np.asarray(grid.standardize(s_arr)),
        covariates=np.vstack(z_blocks),
        pseudo_value=np.concatenate(pv_blocks),
    )


@dataclass(frozen=True)
class ModelSpec:
    """Time-function degree per encoded covariate column (0, 1 or 2).

    Columns absent from ``degrees`` are left out of the model. The intercept
    always carries a quadratic time function.
    """

    degrees: Mapping[str, int] = field(default_factory=dict)
    intercept_degree: int = 2

    def __post_init__(self):
        for name, d in self.degrees.items():
            if d not in (0, 1, 2):
                raise ValueError(f"degree for {name!r} must be 0, 1 or 2, got {d}")
        if self.intercept_degree not in (0, 1, 2):
            raise ValueError("intercept degree must be 0, 1 or 2")

    @classmethod
    def uniform(cls, columns: Iterable[str], degree: int) -> "ModelSpec":
        return cls({c: degree for c in columns})

    def replace(self, **changes: int) -> "ModelSpec":
        return ModelSpec({**self.degrees, **changes}, self.intercept_degree)


def time_label(power: int, span: float) -> str:
    """Human label of a time function, e.g. ``s/5`` or ``(s/5)^2``."""
    if power == 0:
        return "1"
    base = f"s/{span:g}"
    return base if power == 1 else f"({base})^{power}"


@dataclass(frozen=True)
class Design:
    response: np.ndarray
    matrix: np.ndarray
    clusters: np.ndarray
    terms: tuple[tuple[str, int], ...]

    @property
    def labels(self) -> list[str]:
        return [t if p == 0 else f"{t}:s^{p}" for t, p in self.terms]


def design_matrix(stacked: StackedLandmarkDataset, spec: ModelSpec) -> Design:
    """Design with columns [1, s̄, s̄²] then, per covariate, Z, Z·s̄, Z·s̄² up to its degree.

    With a single landmark s̄ carries no variation, so every time function is
    dropped and only main effects remain.
    """
    unknown = set(spec.degrees) - set(stacked.columns)
    if unknown:
        raise ValueError(f"spec names unknown columns: {sorted(unknown)}")
    cap = 0 if len(np.unique(stacked.landmark)) <= 1 else 2
    sb = stacked.sbar
    cols, terms = [], []
    for p in range(min(spec.intercept_degree, cap) + 1):
        cols.append(sb**p)
        terms.append((INTERCEPT, p))
    for j, name in enumerate(stacked.columns):
        if name not in spec.degrees:
            continue
        z = stacked.covariates[:, j]
        for p in range(min(spec.degrees[name], cap) + 1):
            cols.append(z * sb**p)
            terms.append((name, p))
    return Design(
        response=stacked.pseudo_value.copy(),
        matrix=np.column_stack(cols),
        clusters=stacked.subject_ids.copy(),
        terms=tuple(terms),
    )
