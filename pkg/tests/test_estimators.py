import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from cohash_aqp.estimators import (
    Z_95, StageSample, bernoulli, bernoulli_variance_estimate, census, chunk_induced,
    confidence_interval, hajek_total, ht_total, make_estimate, multi_stage_estimate,
    multi_stage_variance_estimate, ratio_estimate, srswor, srswor_variance_estimate,
    stage_variance_terms, two_stage_estimate, two_stage_variance, two_stage_variance_estimate,
    var_fixed_size, var_fixed_size_estimate, var_ht, var_ht_estimate,
)
from cohash_aqp.oracle import NestedDesign, enumerate_design

CLUSTERS = [[1, 2], [3, 4], [5, 6]]
TOTALS = [3.0, 7.0, 11.0]


def test_ht_total_bernoulli_half():
    s = StageSample([0, 1], bernoulli(4, 0.5), values=[2, 3])
    assert ht_total(s) == 10.0


def test_ht_total_census_is_exact():
    s = StageSample(np.arange(4), census(4), values=[1, 2, 3, 4])
    assert ht_total(s) == 10.0


def test_srswor_cluster_mean_over_all_samples():
    space = enumerate_design(srswor(2, 3), TOTALS)
    assert len(space) == 3
    assert_allclose(space.expectation(ht_total), 21.0, rtol=1e-12)


def test_hajek_equal_pi():
    s = StageSample([0, 1], bernoulli(4, 0.5), values=[2, 3])
    assert hajek_total(s, 4) == 10.0


@pytest.mark.parametrize("factor", [0.7, 0.1, 0.5, 0.9])
def test_hajek_invariant_to_pi_scaling(factor):
    s = StageSample([0, 2, 3], srswor(3, 5), values=[1.5, 2.25, 7.0])
    scaled = StageSample(s.units, s.design.scaled(factor), values=s.values)
    assert hajek_total(scaled, 5) == hajek_total(s, 5)


def test_hajek_empty_sample_rejected():
    with pytest.raises(ValueError, match="no data"):
        hajek_total(StageSample([], srswor(1, 3), values=[]), 3)


def test_var_ht_bernoulli_closed_form():
    t = np.array([1.0, 4.0, 2.5])
    p = 0.3
    assert_allclose(var_ht(t, bernoulli(3, p)), np.sum(t ** 2 * (1 - p) / p), rtol=1e-12)


def test_var_ht_census_zero():
    assert var_ht([1, 2, 3], census(3)) == 0.0


def test_var_ht_matches_enumeration():
    space = enumerate_design(srswor(2, 3), TOTALS)
    assert_allclose(var_ht(TOTALS, srswor(2, 3)), space.variance(ht_total), rtol=1e-12)


def test_fixed_size_form_equals_ht_form():
    d = srswor(2, 3)
    assert_allclose(var_fixed_size(TOTALS, d), var_ht(TOTALS, d), rtol=1e-12)


def test_fixed_size_constant_values_zero():
    assert_allclose(var_fixed_size([4.0] * 5, srswor(2, 5)), 0.0, atol=1e-12)


def test_fixed_size_rejects_bernoulli():
    with pytest.raises(ValueError):
        var_fixed_size([1, 2], bernoulli(2, 0.5))
    with pytest.raises(ValueError):
        var_fixed_size_estimate(StageSample([0], bernoulli(2, 0.5), values=[1.0]))


def test_srswor_closed_form_matches_matrix_form():
    d = srswor(3, 7)
    s = StageSample([1, 4, 6], d, values=[2.0, 5.0, 11.0])
    assert_allclose(srswor_variance_estimate(s.values, 7), var_ht_estimate(s), rtol=1e-12)


def test_bernoulli_closed_form_matches_matrix_form():
    s = StageSample([0, 3], bernoulli(5, 0.4), values=[2.0, 3.0])
    assert_allclose(bernoulli_variance_estimate(s.values, 0.4), var_ht_estimate(s), rtol=1e-12)


def test_chunk_induced_degenerate_pairs_rejected():
    # clusters in different chunks with one surviving chunk cannot co-occur
    d = chunk_induced([0, 1], n_chunks=2, surviving=1)
    with pytest.raises(ValueError, match="design degenerate"):
        var_ht_estimate(StageSample([0, 1], d, values=[1.0, 1.0]))


def _two_stage(n1=2, n2=1):
    inner = [NestedDesign(srswor(n2, len(c))) for c in CLUSTERS]
    return NestedDesign(srswor(n1, len(CLUSTERS)), inner)


def test_two_stage_space_size_and_unbiased():
    space = enumerate_design(_two_stage(), CLUSTERS)
    assert len(space) == 12
    assert_allclose(space.total_probability, 1.0, rtol=1e-12)
    assert_allclose(space.expectation(two_stage_estimate), 21.0, rtol=1e-12)


def test_two_stage_degenerate_first_stage():
    space = enumerate_design(_two_stage(n1=3), CLUSTERS)
    for s, _ in space.outcomes:
        assert_allclose(two_stage_estimate(s), sum(ht_total(sub) for sub in s.subsamples), rtol=1e-12)


def test_two_stage_census_second_stage_reduces_to_cluster_ht():
    inner = [NestedDesign(census(2)) for _ in CLUSTERS]
    space = enumerate_design(NestedDesign(srswor(2, 3), inner), CLUSTERS)
    v = two_stage_variance(CLUSTERS, srswor(2, 3), [census(2)] * 3)
    assert_allclose(v, var_ht(TOTALS, srswor(2, 3)), rtol=1e-12)
    assert_allclose(space.variance(two_stage_estimate), v, rtol=1e-12)


def test_two_stage_census_first_stage_has_no_stage1_term():
    v = two_stage_variance(CLUSTERS, census(3), [srswor(1, 2)] * 3)
    assert_allclose(v, sum(var_ht(c, srswor(1, 2)) for c in CLUSTERS), rtol=1e-12)


CLUSTERS3 = [[1, 2, 4], [3, 5, 9], [6, 7, 8]]


def test_two_stage_variance_and_estimator_match_enumeration():
    # both stages need positive joint probabilities for an unbiased variance estimate
    inner = [NestedDesign(srswor(2, 3)) for _ in CLUSTERS3]
    space = enumerate_design(NestedDesign(srswor(2, 3), inner), CLUSTERS3)
    v = two_stage_variance(CLUSTERS3, srswor(2, 3), [srswor(2, 3)] * 3)
    assert_allclose(space.variance(two_stage_estimate), v, rtol=1e-9)
    assert_allclose(space.expectation(two_stage_variance_estimate), v, rtol=1e-9)


def test_three_stage_toy_unbiased():
    pop = [[[1, 2], [3, 4]], [[5, 6], [7, 8]]]
    leaf = NestedDesign(srswor(1, 2))
    mid = NestedDesign(srswor(1, 2), [leaf, leaf])
    spec = NestedDesign(srswor(1, 2), [mid, mid])
    space = enumerate_design(spec, pop)
    assert len(space) == 8
    assert_allclose(space.expectation(multi_stage_estimate), 36.0, rtol=1e-12)
    assert space.outcomes[0][0].depth == 3


def test_multi_stage_k1_is_ht():
    s = StageSample([0, 2], srswor(2, 4), values=[1.0, 3.0])
    assert multi_stage_estimate(s) == ht_total(s)


def test_truncation_two_equals_two_stage_estimator():
    space = enumerate_design(_two_stage(), CLUSTERS)
    for s, _ in space.outcomes:
        v, _ = multi_stage_variance_estimate(s, truncate_at=2)
        assert_allclose(v, max(two_stage_variance_estimate(s), 0.0), rtol=1e-12)


def test_single_census_cluster_has_zero_stage1_term():
    s = StageSample([0], census(1), subsamples=[StageSample([0], srswor(1, 2), values=[3.0])])
    assert stage_variance_terms(s)[0] == 0.0


def test_truncate_at_zero_rejected():
    s = StageSample([0], census(1), values=[1.0])
    with pytest.raises(ValueError):
        multi_stage_variance_estimate(s, truncate_at=0)


def test_make_estimate_clamps_negative():
    e = make_estimate(5.0, -2.0)
    assert e.clamped and e.variance == 0.0 and e.ci_low == e.ci_high == 5.0


def test_confidence_interval_95():
    lo, hi = confidence_interval(10.0, 4.0)
    assert_allclose([lo, hi], [10 - 2 * Z_95, 10 + 2 * Z_95])


def test_ratio_all_equal_values_zero_variance():
    y = np.full(4, 3.0)
    x = np.ones(4)
    p = 0.5
    # totals of y and x under Bernoulli; residuals vanish
    var_y = bernoulli_variance_estimate(y, p)
    var_x = bernoulli_variance_estimate(x, p)
    cov = float(np.sum((1 - p) / p ** 2 * y * x))
    e = ratio_estimate(y.sum() / p, x.sum() / p, var_y, var_x, cov)
    assert_allclose(e.point, 3.0)
    assert_allclose(e.variance, 0.0, atol=1e-12)


def test_ratio_empty_domain():
    with pytest.raises(ValueError, match="empty-domain average"):
        ratio_estimate(0.0, 0.0, 0.0, 0.0, 0.0)


def test_ratio_bias_small_under_cluster_sampling():
    rng = np.random.default_rng(0)
    clusters = [rng.integers(1, 20, size=rng.integers(2, 6)).astype(float) for _ in range(40)]
    truth = np.concatenate(clusters).mean()
    ests = []
    for _ in range(2000):
        keep = rng.random(40) < 0.5
        if not keep.any():
            continue
        y = sum(c.sum() for c, k in zip(clusters, keep) if k)
        x = sum(len(c) for c, k in zip(clusters, keep) if k)
        ests.append(y / x)
    assert abs(np.mean(ests) - truth) / truth < 0.02


@settings(max_examples=40, deadline=None)
@given(values=st.lists(st.integers(-50, 50), min_size=2, max_size=8), data=st.data())
def test_property_srswor_unbiased(values, data):
    N = len(values)
    n = data.draw(st.integers(1, N))
    space = enumerate_design(srswor(n, N), values)
    assert_allclose(space.expectation(ht_total), sum(values), rtol=1e-9, atol=1e-9)
    assert_allclose(space.variance(ht_total), var_ht(values, srswor(n, N)), rtol=1e-9, atol=1e-7)
