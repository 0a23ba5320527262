"""Kaplan-Meier estimation and restricted-mean functionals of the survival curve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm


@dataclass(frozen=True)
class SurvivalCurve:
    """Right-continuous product-limit step function.

    ``survival[k]`` is S just after ``event_times[k]``; S is 1 before the first
    event and flat after the last one.
    """

    event_times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    n_events: np.ndarray
    max_observed_time: float
    last_is_event: bool

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.event_times, t, side="right")
        vals = np.concatenate([[1.0], self.survival])[idx]
        return float(vals) if vals.ndim == 0 else vals

    def integral(self, a: float, b: float) -> float:
        """Exact integral of S over [a, b]."""
        if b <= a:
            return 0.0
        knots = self.event_times[(self.event_times > a) & (self.event_times < b)]
        pts = np.concatenate([[a], knots, [b]])
        return float(np.sum(self(pts[:-1]) * np.diff(pts)))

    def confidence_interval(self, t: float, level: float = 0.95) -> tuple[float, float]:
        """Pointwise CI for S(t) on the log scale with Greenwood variance."""
        s = self(t)
        mask = self.event_times <= t
        n, d = self.at_risk[mask], self.n_events[mask]
        if s == 0.0 or np.any(n == d):
            return (float("nan"), float("nan"))
        se_log = np.sqrt(np.sum(d / (n * (n - d))))
        z = norm.ppf(0.5 + level / 2)
        return (float(s * np.exp(-z * se_log)), float(min(1.0, s * np.exp(z * se_log))))


def kaplan_meier(times, statuses) -> SurvivalCurve:
    """Product-limit estimator; at tied times deaths precede censorings."""
    t = np.asarray(times, dtype=float)
    d = np.asarray(statuses)
    if t.ndim != 1 or t.shape != d.shape:
        raise ValueError("times and statuses must be 1-d of equal length")
    if t.size == 0:
        raise ValueError("empty sample")
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValueError("times must be finite and non-negative")
    if not np.all((d == 0) | (d == 1)):
        raise ValueError("statuses must be 0 or 1")
    d = d.astype(int)
    uniq = np.unique(t[d == 1])
    at_risk = len(t) - np.searchsorted(np.sort(t), uniq, side="left")
    n_events = np.bincount(np.searchsorted(uniq, t[d == 1]), minlength=len(uniq))
    surv = np.cumprod(1.0 - n_events / at_risk)
    tmax = float(t.max())
    return SurvivalCurve(
        event_times=uniq,
        survival=surv,
        at_risk=at_risk,
        n_events=n_events,
        max_observed_time=tmax,
        last_is_event=bool(np.any(d[t == tmax] == 1)),
    )


@dataclass(frozen=True)
class RestrictedMean:
    value: float
    horizon: float
    truncated: bool = False


def rmst(curve: SurvivalCurve, tau: float) -> RestrictedMean:
    """Area under S on [0, tau], clipped at the largest observed time."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return crmst(curve, 0.0, tau)


def crmst(curve: SurvivalCurve, s: float, w: float) -> RestrictedMean:
    """Conditional restricted mean: integral of S over [s, s+w] divided by S(s).

    Past the largest observed time the curve is not extrapolated; the integral
    stops there and ``truncated`` is set when survival had not reached zero.
    """
    if not w > 0:
        raise ValueError("window must be positive")
    if s < 0:
        raise ValueError("prediction time must be non-negative")
    s_at = curve(s)
    if s_at <= 0.0:
        raise ValueError(f"no survivors at s={s}: S(s) = 0")
    end = s + w
    upper = min(end, curve.max_observed_time)
    truncated = end > curve.max_observed_time and curve(curve.max_observed_time) > 0
    return RestrictedMean(curve.integral(s, upper) / s_at, w, truncated)
