"""Jackknife pseudo-observations for the (conditional) restricted mean survival time.

For an at-risk sample of size n, subject i receives

    PV_i = n * theta - (n - 1) * theta_(-i)

where theta is the Kaplan-Meier plug-in cRMST on the whole sample and
theta_(-i) the same estimate with subject i left out. Each leave-one-out
curve applies the same truncation rule as :func:`dynrmst.survival.crmst`
(integrate up to the largest time still in the sample, no extrapolation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .survival import crmst, kaplan_meier


@dataclass(frozen=True)
class PseudoValueSet:
    landmark: float
    window: float
    subject_ids: tuple
    values: np.ndarray
    estimate: float

    def as_dict(self) -> dict:
        return dict(zip(self.subject_ids, self.values.tolist()))


def _loo_crmst(t: np.ndarray, d: np.ndarray, s: float, w: float) -> np.ndarray:
    """theta_(-i) for every i, vectorized over the shared event-time grid."""
    n = len(t)
    u = np.unique(t[d == 1])
    at_risk = (t[None, :] >= u[:, None]).sum(axis=1)
    deaths = ((t[None, :] == u[:, None]) & (d[None, :] == 1)).sum(axis=1)
    # subject i's own contribution to each risk set / death count
    own_risk = t[:, None] >= u[None, :]
    own_death = (t[:, None] == u[None, :]) & (d[:, None] == 1)
    n_loo = at_risk[None, :] - own_risk
    d_loo = deaths[None, :] - own_death
    safe_n = np.where(n_loo > 0, n_loo, 1)
    factor = np.where(n_loo > 0, 1.0 - d_loo / safe_n, 1.0)
    surv = np.cumprod(factor, axis=1)

    order = np.sort(t)
    tmax_loo = np.full(n, order[-1])
    if n > 1 and order[-1] > order[-2]:
        tmax_loo[t == order[-1]] = order[-2]
    upper = np.minimum(s + w, tmax_loo)

    # S on [edges[k], edges[k+1]) is vals[:, k]
    edges = np.concatenate([[-np.inf], u, [np.inf]])
    vals = np.concatenate([np.ones((n, 1)), surv], axis=1)
    lo = np.maximum(edges[:-1], s)[None, :]
    hi = np.minimum(edges[1:][None, :], upper[:, None])
    area = (vals * np.clip(hi - lo, 0.0, None)).sum(axis=1)
    s_at = vals[:, np.searchsorted(u, s, side="right")]
    return area / s_at


def pseudo_values_crmst(times, statuses, s: float, w: float, subject_ids=None) -> PseudoValueSet:
    """Pseudo-values of the cRMST m(s, w) for a sample already at risk at ``s``."""
    t = np.asarray(times, dtype=float)
    d = np.asarray(statuses).astype(int)
    if t.shape != d.shape or t.ndim != 1:
        raise ValueError("times and statuses must be 1-d of equal length")
    n = len(t)
    if n < 2:
        raise ValueError(f"need at least 2 subjects at risk, got {n}")
    if np.any(t <= s):
        raise ValueError(f"all times must exceed the landmark s={s}")
    theta = crmst(kaplan_meier(t, d), s, w).value
    loo = _loo_crmst(t, d, s, w)
    ids = tuple(range(n)) if subject_ids is None else tuple(subject_ids)
    if len(ids) != n:
        raise ValueError("subject_ids length mismatch")
    return PseudoValueSet(float(s), float(w), ids, n * theta - (n - 1) * loo, theta)


def pseudo_values_rmst(times, statuses, tau: float, subject_ids=None) -> PseudoValueSet:
    """Pseudo-values of RMST(tau); the s = 0 case of :func:`pseudo_values_crmst`."""
    return pseudo_values_crmst(times, statuses, 0.0, tau, subject_ids)
