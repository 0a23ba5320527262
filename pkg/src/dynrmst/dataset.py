"""Long-format longitudinal survival data: schema, ingestion, LOCF lookup and summaries."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import IO, Any, Iterable, Mapping, Sequence

import numpy as np
import yaml

from .survival import kaplan_meier

KINDS = ("numeric", "binary", "categorical")


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


class SchemaError(ValueError):
    """Raised for an invalid covariate schema."""


@dataclass(frozen=True)
class Covariate:
    """One covariate descriptor.

    ``per`` is the unit a numeric coefficient refers to: with ``per=10`` the
    encoded value is ``raw / 10`` (SGOT per 10 U/ml). Categorical covariates
    map level labels to the raw spellings that denote them; the reference
    level gets no indicator column.
    """

    name: str
    kind: str
    levels: Mapping[str, tuple[str, ...]] | None = None
    reference: str | None = None
    true_values: tuple[str, ...] = ("1", "yes", "Yes")
    false_values: tuple[str, ...] = ("0", "no", "No")
    per: float = 1.0
    time_dependent: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"covariate {self.name!r}: unknown kind {self.kind!r}")
        if not self.per > 0:
            raise SchemaError(f"covariate {self.name!r}: scaling must be positive")
        if self.kind == "categorical":
            if not self.levels or len(self.levels) < 2:
                raise SchemaError(f"covariate {self.name!r}: categorical needs >= 2 levels")
            if self.reference not in self.levels:
                raise SchemaError(
                    f"covariate {self.name!r}: reference {self.reference!r} is not a level"
                )
            seen = set()
            for raw in (r for spellings in self.levels.values() for r in spellings):
                if raw in seen:
                    raise SchemaError(f"covariate {self.name!r}: value {raw!r} in two levels")
                seen.add(raw)
        if self.kind == "binary" and set(self.true_values) & set(self.false_values):
            raise SchemaError(f"covariate {self.name!r}: overlapping binary values")

    @cached_property
    def _level_of(self) -> dict[str, str]:
        return {raw: lvl for lvl, spellings in (self.levels or {}).items() for raw in spellings}

    @property
    def columns(self) -> list[str]:
        """Names of the encoded design columns this covariate expands to."""
        if self.kind == "categorical":
            return [f"{self.name}[{lvl}]" for lvl in self.levels if lvl != self.reference]
        return [self.name]

    def check(self, raw: str):
        """Validate one raw cell; numeric cells become floats, others stay strings."""
        if self.kind == "numeric":
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(f"non-finite value {raw!r}")
            return value
        if self.kind == "binary":
            if raw not in self.true_values and raw not in self.false_values:
                raise ValueError(f"unknown categorical level {raw!r} for {self.name}")
            return raw
        if raw not in self._level_of:
            raise ValueError(f"unknown categorical level {raw!r} for {self.name}")
        return raw

    def level(self, value) -> str:
        """Level label of a stored categorical/binary value."""
        if self.kind == "binary":
            return "yes" if value in self.true_values else "no"
        if self.kind == "categorical":
            return self._level_of[value]
        raise TypeError(f"{self.name} is numeric")

    def encode(self, value) -> list[float]:
        if self.kind == "numeric":
            return [float(value) / self.per]
        if self.kind == "binary":
            return [1.0 if value in self.true_values else 0.0]
        lvl = self._level_of[value]
        return [1.0 if lvl == other else 0.0 for other in self.levels if other != self.reference]


@dataclass(frozen=True)
class CovariateSchema:
    covariates: tuple[Covariate, ...]
    subject_id: str = "id"
    visit_time: str = "visit_time"
    outcome_time: str = "outcome_time"
    status: str = "status"
    event_values: tuple[str, ...] | None = None
    delimiter: str = ","
    missing_values: tuple[str, ...] = ("NA", "")

    def __post_init__(self):
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate covariate names")
        if not self.covariates:
            raise SchemaError("schema has no covariates")

    @classmethod
    def from_dict(cls, cfg: Mapping[str, Any]) -> "CovariateSchema":
        covs = []
        for c in cfg.get("covariates", []):
            c = dict(c)
            if "levels" in c:
                c["levels"] = {
                    str(k): tuple(str(v) for v in (vs if isinstance(vs, list) else [vs]))
                    for k, vs in c["levels"].items()
                }
            if "reference" in c:
                c["reference"] = str(c["reference"])
            for key in ("true_values", "false_values"):
                if key in c:
                    c[key] = tuple(str(v) for v in c[key])
            if "per" in c:
                c["per"] = float(c["per"])
            try:
                covs.append(Covariate(**c))
            except TypeError as exc:
                raise SchemaError(f"bad covariate entry {c.get('name')!r}: {exc}") from None
        cols = cfg.get("columns", {})
        events = cfg.get("event_values")
        return cls(
            covariates=tuple(covs),
            subject_id=cols.get("subject_id", "id"),
            visit_time=cols.get("visit_time", "visit_time"),
            outcome_time=cols.get("outcome_time", "outcome_time"),
            status=cols.get("status", "status"),
            event_values=None if events is None else tuple(str(v) for v in events),
            delimiter=cfg.get("delimiter", ","),
            missing_values=tuple(str(v) for v in cfg.get("missing_values", ["NA", ""])),
        )

    def covariate(self, name: str) -> Covariate:
        for c in self.covariates:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def columns(self) -> list[str]:
        """Encoded design columns in schema order."""
        return [col for c in self.covariates for col in c.columns]

    def column_owner(self, column: str) -> Covariate:
        for c in self.covariates:
            if column in c.columns:
                return c
        raise KeyError(column)

    def encode(self, values: Mapping[str, Any]) -> np.ndarray:
        return np.array([x for c in self.covariates for x in c.encode(values[c.name])])


def load_schema(path: str | Path) -> CovariateSchema:
    with open(path, encoding="utf-8") as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, dict):
        raise SchemaError(f"{path}: schema must be a mapping")
    return CovariateSchema.from_dict(cfg)


@dataclass(frozen=True)
class SubjectVisit:
    subject_id: str
    visit_time: float
    covariates: Mapping[str, Any]


@dataclass(frozen=True)
class SubjectOutcome:
    subject_id: str
    outcome_time: float
    status: int


@dataclass(frozen=True)
class LongitudinalDataset:
    """Visits plus one terminal outcome per subject.

    Subjects keep the order of their first appearance in the source, and
    visits are sorted by time within a subject. Missing values at follow-up
    visits are carried forward from earlier visits.
    """

    schema: CovariateSchema
    visits: tuple[SubjectVisit, ...]
    outcomes: tuple[SubjectOutcome, ...] = ()
    require_outcome: bool = field(default=True, repr=False)

    def __post_init__(self):
        ids = []
        seen = set()
        for v in self.visits:
            if v.subject_id not in seen:
                seen.add(v.subject_id)
                ids.append(v.subject_id)
        out_ids = [o.subject_id for o in self.outcomes]
        if len(set(out_ids)) != len(out_ids):
            raise DataError("more than one outcome for a subject")
        if self.require_outcome and set(out_ids) != seen:
            missing = seen.symmetric_difference(out_ids)
            raise DataError(f"visits and outcomes disagree on subjects: {sorted(missing)[:5]}")
        object.__setattr__(self, "_ids", tuple(ids))

    @property
    def subject_ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def n_subjects(self) -> int:
        return len(self._ids)

    @cached_property
    def _outcome_by_id(self) -> dict[str, SubjectOutcome]:
        return {o.subject_id: o for o in self.outcomes}

    @cached_property
    def times(self) -> np.ndarray:
        """Outcome times aligned with ``subject_ids``."""
        t = np.array([self._outcome_by_id[i].outcome_time for i in self._ids], dtype=float)
        t.flags.writeable = False
        return t

    @cached_property
    def statuses(self) -> np.ndarray:
        d = np.array([self._outcome_by_id[i].status for i in self._ids], dtype=int)
        d.flags.writeable = False
        return d

    def outcome(self, subject_id: str) -> SubjectOutcome:
        return self._outcome_by_id[subject_id]

    @cached_property
    def _by_subject(self) -> dict[str, tuple[np.ndarray, list[dict], np.ndarray]]:
        # per subject: visit times, LOCF-resolved raw values, encoded rows
        grouped: dict[str, list[SubjectVisit]] = {i: [] for i in self._ids}
        for v in self.visits:
            grouped[v.subject_id].append(v)
        out = {}
        for sid, vs in grouped.items():
            vs.sort(key=lambda v: v.visit_time)
            filled, current = [], {}
            for k, v in enumerate(vs):
                row = {}
                for c in self.schema.covariates:
                    val = v.covariates.get(c.name)
                    if k == 0:
                        row[c.name] = val
                    elif not c.time_dependent or val is None:
                        row[c.name] = current[c.name]
                    else:
                        row[c.name] = val
                current = row
                filled.append(row)
            times = np.array([v.visit_time for v in vs])
            enc = np.vstack([self.schema.encode(r) for r in filled])
            out[sid] = (times, filled, enc)
        return out

    def _visit_index(self, subject_id: str, s: float) -> int:
        try:
            times = self._by_subject[subject_id][0]
        except KeyError:
            raise KeyError(f"unknown subject {subject_id!r}") from None
        if s < 0:
            raise ValueError(f"prediction time must be >= 0, got {s}")
        k = int(np.searchsorted(times, s, side="right")) - 1
        if k < 0:
            raise ValueError(f"subject {subject_id!r} has no visit at or before s={s}")
        return k

    def covariates_at(self, subject_id: str, s: float) -> dict[str, Any]:
        """Covariate values in force at time ``s`` (last observation carried forward)."""
        k = self._visit_index(subject_id, s)
        return dict(self._by_subject[subject_id][1][k])

    def encoded_at(self, subject_ids: Iterable[str], s: float) -> np.ndarray:
        """Encoded design rows (schema column order) for several subjects at ``s``."""
        ids = list(subject_ids)
        if not ids:
            return np.empty((0, len(self.schema.columns)))
        return np.vstack([self._by_subject[i][2][self._visit_index(i, s)] for i in ids])

    def visit_times(self, subject_id: str) -> np.ndarray:
        return self._by_subject[subject_id][0].copy()

    def at_risk(self, s: float) -> list[str]:
        """Subjects whose outcome time is strictly after ``s``."""
        return [i for i, t in zip(self._ids, self.times) if t > s]

    def subset(self, subject_ids: Iterable[str]) -> "LongitudinalDataset":
        keep = set(subject_ids)
        return LongitudinalDataset(
            self.schema,
            tuple(v for v in self.visits if v.subject_id in keep),
            tuple(o for o in self.outcomes if o.subject_id in keep),
            self.require_outcome,
        )

    def __eq__(self, other):
        if not isinstance(other, LongitudinalDataset):
            return NotImplemented
        key = lambda v: (v.subject_id, v.visit_time)  # noqa: E731
        return (
            self.schema == other.schema
            and sorted(self.visits, key=key) == sorted(other.visits, key=key)
            and sorted(self.outcomes, key=lambda o: o.subject_id)
            == sorted(other.outcomes, key=lambda o: o.subject_id)
        )

    __hash__ = None


def _read_text(source) -> str:
    if isinstance(source, (str, Path)):
        return Path(source).read_text(encoding="utf-8")
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def parse_longitudinal(
    source: str | Path | IO, schema: CovariateSchema, *, require_outcome: bool = True
) -> LongitudinalDataset:
    """Parse delimiter-separated visit rows into a validated dataset.

    ``source`` is a path or a text/binary stream. Outcome columns are repeated
    on every row of a subject and must agree. With ``require_outcome=False``
    (patient records for prediction) the outcome columns may be absent or
    blank.
    """
    text = _read_text(source)
    reader = csv.reader(io.StringIO(text), delimiter=schema.delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty input: no header row") from None
    header = [h.strip() for h in header]
    pos = {h: k for k, h in enumerate(header)}
    required = [schema.subject_id, schema.visit_time] + [c.name for c in schema.covariates]
    if require_outcome:
        required += [schema.outcome_time, schema.status]
    missing_cols = [c for c in required if c not in pos]
    if missing_cols:
        raise DataError(f"header lacks columns: {', '.join(missing_cols)}")
    has_outcome = schema.outcome_time in pos and schema.status in pos
    na = set(schema.missing_values)

    visits: list[SubjectVisit] = []
    outcomes: dict[str, SubjectOutcome] = {}
    seen_times: dict[str, set[float]] = {}
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise DataError(f"line {line}: expected {len(header)} fields, got {len(row)}")
        cell = lambda name: row[pos[name]].strip()  # noqa: E731
        sid = cell(schema.subject_id)
        if not sid:
            raise DataError(f"line {line}: empty subject id")
        try:
            vt = float(cell(schema.visit_time))
        except ValueError:
            raise DataError(f"line {line}: bad visit time {cell(schema.visit_time)!r}") from None
        if not math.isfinite(vt) or vt < 0:
            raise DataError(f"line {line}: visit time must be >= 0")
        if vt in seen_times.setdefault(sid, set()):
            raise DataError(f"line {line}: duplicate visit time {vt} for subject {sid}")
        seen_times[sid].add(vt)

        if has_outcome and (cell(schema.outcome_time) or require_outcome):
            outcome = _parse_outcome(schema, sid, cell(schema.outcome_time), cell(schema.status), line)
            prev = outcomes.get(sid)
            if prev is None:
                outcomes[sid] = outcome
            elif prev != outcome:
                raise DataError(f"line {line}: outcome for subject {sid} differs from earlier rows")

        values = {}
        for c in schema.covariates:
            raw = cell(c.name)
            if raw in na:
                values[c.name] = None
                continue
            try:
                values[c.name] = c.check(raw)
            except ValueError as exc:
                raise DataError(f"line {line}: {exc}") from None
        visits.append(SubjectVisit(sid, vt, values))

    if not visits:
        raise DataError("empty input: no data rows")

    first: dict[str, SubjectVisit] = {}
    for v in visits:
        if v.subject_id not in first or v.visit_time < first[v.subject_id].visit_time:
            first[v.subject_id] = v
    for sid, v in first.items():
        if v.visit_time != 0.0:
            raise DataError(f"subject {sid}: no baseline visit at time 0")
        absent = [name for name, val in v.covariates.items() if val is None]
        if absent:
            raise DataError(f"subject {sid}: missing baseline value for {', '.join(absent)}")
    for v in visits:
        o = outcomes.get(v.subject_id)
        if o is not None and v.visit_time > o.outcome_time:
            raise DataError(
                f"subject {v.subject_id}: visit after outcome time "
                f"({v.visit_time} > {o.outcome_time})"
            )
    return LongitudinalDataset(schema, tuple(visits), tuple(outcomes.values()), require_outcome)


def _parse_outcome(schema, sid, raw_time, raw_status, line) -> SubjectOutcome:
    try:
        t = float(raw_time)
    except ValueError:
        raise DataError(f"line {line}: bad outcome time {raw_time!r}") from None
    if not math.isfinite(t) or t <= 0:
        raise DataError(f"line {line}: outcome time must be > 0")
    if schema.event_values is not None:
        status = int(raw_status in schema.event_values)
    elif raw_status in ("0", "1"):
        status = int(raw_status)
    else:
        raise DataError(f"line {line}: status must be 0 or 1, got {raw_status!r}")
    return SubjectOutcome(sid, t, status)


def write_longitudinal(data: LongitudinalDataset, stream: IO[str]) -> None:
    """Serialize ``data`` in the layout ``parse_longitudinal`` reads."""
    schema = data.schema
    writer = csv.writer(stream, delimiter=schema.delimiter, lineterminator="\n")
    names = [c.name for c in schema.covariates]
    writer.writerow(
        [schema.subject_id, schema.visit_time, schema.outcome_time, schema.status] + names
    )
    na = schema.missing_values[0] if schema.missing_values else ""
    for sid in data.subject_ids:
        o = data.outcome(sid)
        if schema.event_values is not None:
            status = schema.event_values[0] if o.status else "censored"
        else:
            status = str(o.status)
        for v in sorted((v for v in data.visits if v.subject_id == sid), key=lambda v: v.visit_time):
            cells = []
            for n in names:
                val = v.covariates.get(n)
                cells.append(na if val is None else (repr(val) if isinstance(val, float) else val))
            writer.writerow([sid, repr(v.visit_time), repr(o.outcome_time), status] + cells)


@dataclass(frozen=True)
class DatasetSummary:
    n_subjects: int
    n_rows: int
    n_events: int
    median_followup: float
    followup_range: tuple[float, float]
    survival_at: dict[float, tuple[float, float, float]]

    @property
    def event_percent(self) -> float:
        return 100.0 * self.n_events / self.n_subjects

    def rows(self) -> list[tuple[str, str]]:
        out = [
            ("n_subjects", str(self.n_subjects)),
            ("n_rows", str(self.n_rows)),
            ("n_events", str(self.n_events)),
            ("event_percent", f"{self.event_percent:.1f}"),
            ("median_followup", f"{self.median_followup:.2f}"),
            ("followup_min", f"{self.followup_range[0]:.2f}"),
            ("followup_max", f"{self.followup_range[1]:.2f}"),
        ]
        for tau, (est, lo, hi) in sorted(self.survival_at.items()):
            out += [
                (f"survival_{tau:g}", f"{est:.4f}"),
                (f"survival_{tau:g}_lower95", f"{lo:.4f}"),
                (f"survival_{tau:g}_upper95", f"{hi:.4f}"),
            ]
        return out


def summarize(data: LongitudinalDataset, horizons: Sequence[float] = (5.0, 10.0)) -> DatasetSummary:
    """Counts, follow-up distribution and Kaplan-Meier survival at ``horizons``."""
    if data.n_subjects == 0 or not data.outcomes:
        raise DataError("cannot summarize an empty dataset")
    t, d = data.times, data.statuses
    curve = kaplan_meier(t, d)
    return DatasetSummary(
        n_subjects=data.n_subjects,
        n_rows=len(data.visits),
        n_events=int(d.sum()),
        median_followup=float(np.median(t)),
        followup_range=(float(t.min()), float(t.max())),
        survival_at={float(h): (curve(h), *curve.confidence_interval(h)) for h in horizons},
    )
