import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynrmst.pseudo import pseudo_values_crmst, pseudo_values_rmst

from oracles import jackknife_oracle, multisets


def test_no_censoring_full_window():
    pv = pseudo_values_crmst([1, 2, 3, 4], [1, 1, 1, 1], 0, 4)
    np.testing.assert_allclose(pv.values, [1, 2, 3, 4], atol=1e-12)
    assert pv.values.mean() == pytest.approx(pv.estimate) == pytest.approx(2.5)


def test_no_censoring_conditional():
    pv = pseudo_values_crmst([2, 3, 4], [1, 1, 1], 1, 2)
    np.testing.assert_allclose(pv.values, [1, 2, 2], atol=1e-12)


def test_censored_sample_hand_jackknife():
    # KM: S = 1/2 after the death at 2, censored tail to 3 -> theta = 2 + 0.5 = 2.5
    # leave out the death: S = 1 up to 3 -> 3; leave out the censored: S drops to 0 at 2 -> 2
    pv = pseudo_values_crmst([2, 3], [1, 0], 0, 4)
    assert pv.estimate == pytest.approx(2.5)
    np.testing.assert_allclose(pv.values, [2 * 2.5 - 3, 2 * 2.5 - 2], atol=1e-12)


def test_rmst_is_s0_case():
    t, d = [1.0, 2.5, 3.0, 4.0, 6.0], [1, 0, 1, 1, 0]
    np.testing.assert_array_equal(
        pseudo_values_rmst(t, d, 3.5).values, pseudo_values_crmst(t, d, 0, 3.5).values
    )
    np.testing.assert_allclose(pseudo_values_rmst([1, 2, 3, 4], [1] * 4, 3).values, [1, 2, 3, 3], atol=1e-12)


def test_identical_subjects():
    np.testing.assert_allclose(pseudo_values_rmst([2.0, 2.0], [1, 1], 5).values, [2.0, 2.0])


def test_requires_at_risk_sample():
    with pytest.raises(ValueError):
        pseudo_values_crmst([1, 2, 3], [1, 1, 1], 1, 2)
    with pytest.raises(ValueError):
        pseudo_values_crmst([3], [1], 1, 2)


def test_no_censoring_identity_exhaustive():
    for sample in multisets((1.0, 1.5, 2.0, 3.0), 6):
        if len(sample) < 2:
            continue
        t = np.array(sample)
        for s, w in ((0.0, 1.0), (0.0, 2.5), (0.5, 1.0), (0.5, 5.0)):
            pv = pseudo_values_crmst(t, np.ones_like(t), s, w)
            np.testing.assert_allclose(pv.values, np.minimum(t - s, w), atol=1e-12)


censored_samples = st.integers(2, 9).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(2, 12).map(lambda k: k / 2), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n),
    )
)


@settings(max_examples=200, deadline=None)
@given(censored_samples, st.sampled_from([0.0, 0.5]), st.sampled_from([0.5, 2.0, 4.0]))
def test_matches_direct_jackknife(sample, s, w):
    t, d = sample
    np.testing.assert_allclose(
        pseudo_values_crmst(t, d, s, w).values, jackknife_oracle(t, d, s, w), atol=1e-10
    )


@settings(max_examples=100, deadline=None)
@given(censored_samples, st.randoms(use_true_random=False))
def test_permutation_equivariance(sample, rnd):
    t, d = map(np.array, sample)
    perm = list(range(len(t)))
    rnd.shuffle(perm)
    a = pseudo_values_crmst(t, d, 0.5, 2.0).values
    b = pseudo_values_crmst(t[perm], d[perm], 0.5, 2.0).values
    np.testing.assert_allclose(b, a[perm], atol=1e-12)


def test_finite_and_may_overshoot():
    pv = pseudo_values_crmst([1, 2, 3, 4, 5], [1, 0, 1, 0, 1], 0, 4).values
    assert np.all(np.isfinite(pv))
