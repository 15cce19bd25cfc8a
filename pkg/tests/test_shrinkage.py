import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from repair import errors
from repair.shrinkage import (ShrinkageGroups, covered_label_counts, estimate_variances, shrink,
                              shrink_params)
from repair.types import ModelParams


def test_identical_offsets():
    g = ShrinkageGroups.single(4)
    s2, mu, nu2 = estimate_variances(np.full(4, 0.7), [1, 5, 0, 9], g)
    assert nu2[0] == 1e-6
    assert abs(mu[0] - 0.7) < 1e-15
    assert np.allclose(shrink(np.full(4, 0.7), s2, mu, nu2, g), 0.7, atol=1e-15)


def test_zero_count_variance():
    s2, _, _ = estimate_variances(np.zeros(2), [0, 3], ShrinkageGroups.single(2))
    assert s2[0] == 1.0 and s2[1] == 0.25


def test_two_class_by_hand():
    s2, mu, nu2 = estimate_variances(np.array([0.0, 2.0]), [100, 100], ShrinkageGroups.single(2))
    assert abs(mu[0] - 1.0) < 1e-15
    assert np.allclose(s2, 1 / 101)
    assert abs(nu2[0] - (1 - 1 / 101)) < 1e-15


def test_shrink_analytic_and_limits():
    g = ShrinkageGroups.single(1)
    assert shrink([2.0], [1.0], [0.0], [1.0], g)[0] == 1.0
    assert abs(shrink([2.0], [1e-6], [0.0], [1.0], g)[0] - 2.0) < 1e-3
    assert abs(shrink([2.0], [1.0], [0.0], [1e-6], g)[0]) < 1e-5
    with pytest.raises(errors.NonPositiveVariance):
        shrink([2.0], [0.0], [0.0], [1.0], g)


def test_empty_group():
    with pytest.raises(errors.EmptyGroup):
        estimate_variances(np.zeros(3), [1, 1, 1], ShrinkageGroups(np.array([0, 0, 0]), 2))


def test_frequency_groups():
    g = ShrinkageGroups.by_frequency(np.array([5, 1, 9, 3, 7, 2]), 3)
    assert g.group_of.tolist() == [1, 0, 2, 1, 2, 0]


@given(arrays(np.float64, 8, elements=st.floats(-5, 5)),
       arrays(np.int64, 8, elements=st.integers(0, 200)))
def test_convexity(a_hat, counts):
    g = ShrinkageGroups.by_frequency(counts, 2)
    s2, mu, nu2 = estimate_variances(a_hat, counts, g)
    out = shrink(a_hat, s2, mu, nu2, g)
    m = mu[g.group_of]
    lo = np.minimum(a_hat, m) - 1e-12
    hi = np.maximum(a_hat, m) + 1e-12
    assert np.all((out >= lo) & (out <= hi))


@given(arrays(np.float64, 6, elements=st.floats(-5, 5)), st.integers(0, 5),
       st.integers(0, 100), st.integers(1, 100))
def test_monotone_in_count(a_hat, y, n, extra):
    g = ShrinkageGroups.single(6)
    s2 = np.full(6, 0.2)
    mu, nu2 = np.array([0.3]), np.array([0.5])
    s_lo = s2.copy()
    s_lo[y] = 1 / (n + 1)
    s_hi = s2.copy()
    s_hi[y] = 1 / (n + extra + 1)
    d_lo = abs(shrink(a_hat, s_lo, mu, nu2, g)[y] - a_hat[y])
    d_hi = abs(shrink(a_hat, s_hi, mu, nu2, g)[y] - a_hat[y])
    assert d_hi <= d_lo + 1e-12


def test_shrink_params_and_counts():
    p = ModelParams(np.array([1.0, -1.0, 0.5]), np.zeros(4))
    counts = covered_label_counts([0, 0, 1], 3)
    assert counts.tolist() == [2, 1, 0]
    q = shrink_params(p, counts)
    assert q.shrunk and np.all(q.theta == 0)
    # the zero-count class moves furthest toward the group mean
    s2, mu, nu2 = estimate_variances(p.a, counts, ShrinkageGroups.single(3))
    assert np.allclose(q.a, shrink(p.a, s2, mu, nu2, ShrinkageGroups.single(3)))
