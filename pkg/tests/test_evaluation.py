import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynrmst.evaluation import (
    concordance_counts,
    evaluate_landmark,
    harrell_c,
    monte_carlo_cv,
    prediction_error,
    split_subjects,
)
from dynrmst.landmark import LandmarkGrid

from oracles import concordance_oracle

SMALL_GRID = LandmarkGrid(0, 4, 2, 5)

samples = st.integers(2, 12).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 5), min_size=n, max_size=n),
        st.lists(st.integers(1, 8), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n),
    )
)


def test_perfect_and_reversed():
    t = np.array([1.0, 2.0, 3.0, 4.0])
    d = np.ones(4)
    assert harrell_c(t, t, d) == 1.0
    assert harrell_c(-t, t, d) == 0.0
    assert harrell_c(np.zeros(4), t, d) == 0.5


def test_censored_first_not_comparable():
    # the censored subject at 1 pairs with nobody; (2,3) is the only pair
    conc, n = concordance_counts([9, 1, 2], [1, 2, 3], [0, 1, 0])
    assert (conc, n) == (1.0, 1)


def test_tied_times_not_comparable():
    assert concordance_counts([1, 2], [2, 2], [1, 1])[1] == 0


def test_horizon_censors():
    # beyond the horizon both are censored: no pair is left
    assert concordance_counts([1, 2], [6, 7], [1, 1], horizon=5)[1] == 0
    assert concordance_counts([1, 2], [4, 7], [1, 1], horizon=5) == (1.0, 1)


def test_no_pairs_raises():
    with pytest.raises(ValueError, match="comparable"):
        harrell_c([1, 2], [1, 2], [0, 0])
    with pytest.raises(ValueError):
        harrell_c([1, 2, 3], [1, 2], [1, 1])


@settings(max_examples=200, deadline=None)
@given(samples)
def test_matches_brute_force(sample):
    p, t, d = map(np.array, sample)
    conc, n = concordance_counts(p, t, d)
    if n == 0:
        assert np.isnan(concordance_oracle(p, t, d))
    else:
        assert conc / n == pytest.approx(concordance_oracle(p, t, d))
        assert conc / n + concordance_counts(-p, t, d)[0] / n == pytest.approx(1.0)
        # strictly increasing transforms leave C unchanged
        assert harrell_c(np.exp(p) * 3 + 1, t, d) == pytest.approx(conc / n)


def test_prediction_error_properties():
    rng = np.random.default_rng(4)
    pv = rng.normal(size=20)
    pred = rng.normal(size=20)
    assert prediction_error(pv, pv) == 0
    assert prediction_error(pv + 0.3, pv) == pytest.approx(0.3)
    e = prediction_error(pred, pv)
    assert prediction_error(pred + 0.2, pv) <= e + 0.2 + 1e-12
    perm = rng.permutation(20)
    assert prediction_error(pred[perm], pv[perm]) == pytest.approx(e)
    assert prediction_error(3 * pred, 3 * pv) == pytest.approx(3 * e)
    assert prediction_error([1, 2], [2, 4]) == 1.5
    with pytest.raises(ValueError):
        prediction_error([], [])


def test_evaluate_landmark(pbc):
    ids = pbc.at_risk(2.0)
    m = evaluate_landmark(np.zeros(len(ids)), pbc, ids, 2.0, 5.0)
    assert m.c_index == 0.5 and m.n_at_risk == len(ids) and m.n_comparable_pairs > 0


def test_split_stratified(pbc):
    tr, te = split_subjects(pbc, 0.7, np.random.default_rng(0))
    assert not set(tr) & set(te) and len(tr) + len(te) == 312
    ev = dict(zip(pbc.subject_ids, pbc.statuses))
    assert sum(ev[i] for i in tr) == round(0.7 * 140)


@pytest.fixture(scope="module")
def small_report(pbc):
    return monte_carlo_cv(pbc, SMALL_GRID, reps=3, seed=5)


def test_cv_deterministic(pbc, small_report):
    again = monte_carlo_cv(pbc, SMALL_GRID, reps=3, seed=5)
    for m in ("dynamic", "static"):
        for k in ("c_index", "prediction_error_abs"):
            np.testing.assert_array_equal(again.replicates[m][k], small_report.replicates[m][k])


def test_cv_mean_is_arithmetic(small_report):
    vals = small_report.replicates["dynamic"]["c_index"]
    np.testing.assert_allclose(small_report.mean("dynamic", "c_index"), vals.mean(axis=0))
    assert all(small_report.count("static", "c_index") == 3)
    assert len(small_report.rows()) == 3 * 2 * 2


def test_cv_values_in_range(small_report):
    c = small_report.replicates["dynamic"]["c_index"]
    assert np.all((c >= 0) & (c <= 1))
    assert np.all(small_report.replicates["static"]["prediction_error_abs"] >= 0)


def test_cv_near_full_training(pbc):
    rep = monte_carlo_cv(pbc, SMALL_GRID, reps=1, train_fraction=0.95, seed=1, select=False)
    assert rep.failed == ()
    assert np.all(np.isfinite(rep.mean("dynamic", "c_index")))


def test_cv_rejects_bad_arguments(pbc):
    with pytest.raises(ValueError):
        monte_carlo_cv(pbc, SMALL_GRID, reps=0)
    with pytest.raises(ValueError):
        monte_carlo_cv(pbc, SMALL_GRID, reps=1, train_fraction=1.0)
