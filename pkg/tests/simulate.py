"""Synthetic datasets with a known cRMST structure."""

import numpy as np

from dynrmst.dataset import Covariate, CovariateSchema, LongitudinalDataset, SubjectOutcome, SubjectVisit
from dynrmst.landmark import LandmarkGrid, StackedLandmarkDataset

BINARY_SCHEMA = CovariateSchema((Covariate("z", "binary"),), "id", "t", "T", "d")
RATES = (0.15, 0.30)
WINDOW = 5.0


def exp_crmst(rate, w=WINDOW):
    """cRMST of an exponential law; memoryless, hence the same at every s."""
    return (1 - np.exp(-rate * w)) / rate


TRUE_EFFECT = exp_crmst(RATES[1]) - exp_crmst(RATES[0])


def constant_effect_dataset(rng, n=300, censor=(6.0, 20.0)):
    """Binary z, exponential times: the z effect on m(s, w) is constant in s."""
    z = rng.integers(0, 2, n)
    t = rng.exponential(1.0 / np.where(z == 1, RATES[1], RATES[0]))
    c = rng.uniform(*censor, n)
    obs, d = np.minimum(t, c), (t <= c).astype(int)
    obs = np.maximum(obs, 1e-3)
    visits = tuple(SubjectVisit(str(k), 0.0, {"z": str(z[k])}) for k in range(n))
    outcomes = tuple(SubjectOutcome(str(k), float(obs[k]), int(d[k])) for k in range(n))
    return LongitudinalDataset(BINARY_SCHEMA, visits, outcomes)


def synthetic_stacked(rng, slope, curvature=0.0, n_subjects=200, grid=LandmarkGrid(0, 5, 0.5, 5), noise=0.5):
    """Stacked rows with response 2 + 1.5 s̄ + z (1 + slope s̄ + curvature s̄²) + noise."""
    ids, s_col, zs = [], [], []
    z_subject = rng.normal(size=n_subjects)
    for s in grid.landmarks:
        for k in range(n_subjects):
            ids.append(str(k))
            s_col.append(s)
            zs.append(z_subject[k])
    s_arr = np.array(s_col)
    sb = grid.standardize(s_arr)
    z = np.array(zs)
    y = 2 + 1.5 * sb + z * (1 + slope * sb + curvature * sb**2) + rng.normal(scale=noise, size=len(z))
    return StackedLandmarkDataset(grid, ("z",), np.array(ids, dtype=object), s_arr, sb, z[:, None], y)
