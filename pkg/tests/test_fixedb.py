"""Tests for fixed-b subsampling p-values."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from sninference.core import Functional, TimeSeries
from sninference.errors import ConfigurationError, DomainError
from sninference.estimators import type1_position
from sninference.fixedb import (
    FixedBResult,
    block_length,
    calibrated_pvalue,
    fixedb_pvalue,
    subsample_norms,
    subsampling_distribution,
    window_estimates,
)
from sninference.limits import CriticalValueTable, TableSpec, simulate_limit
from sninference.simulate import iid_normal

MEAN = Functional.mean()
MEDIAN = Functional.quantile(0.5)


def manual_result(pvalue, b):
    return FixedBResult(
        pvalue=pvalue,
        b=b,
        l=10,
        count=91,
        exceedances=0,
        statistic=0.0,
        subsample_norms=np.zeros(91),
        theta_hat=np.zeros(1),
        theta0=np.zeros(1),
    )


@pytest.mark.parametrize("b, n, expected", [(0.1, 1000, 100), (0.001, 100, 1), (0.25, 10, 3), (1.0, 7, 7)])
def test_block_length(b, n, expected):
    assert block_length(b, n) == expected


@pytest.mark.parametrize("b", [0.0, -0.2, 1.5])
def test_block_length_rejects(b):
    with pytest.raises(DomainError):
        block_length(b, 100)


class TestWindows:
    def test_mean_windows(self):
        windows = window_estimates(TimeSeries([1.0, 2.0, 3.0, 4.0]), MEAN, 2)
        assert_allclose(windows[:, 0], [1.5, 2.5, 3.5])

    def test_median_norms_match_naive(self, iid_series):
        x = iid_series.values[:, 0]
        l = 20
        theta_hat = np.sort(x)[type1_position(0.5, x.size)]
        naive = [np.sqrt(l) * abs(np.sort(x[j:j + l])[type1_position(0.5, l)] - theta_hat) for j in range(x.size - l + 1)]
        assert_allclose(subsample_norms(iid_series, MEDIAN, l), naive, rtol=0.0, atol=1e-12)

    def test_window_length_range(self, iid_series):
        with pytest.raises(DomainError):
            window_estimates(iid_series, MEAN, 0)

    def test_constant_series_distribution(self):
        ts = TimeSeries(np.full(50, 3.0))
        cdf = subsampling_distribution(ts, MEAN, 5, [-0.5, 0.0, 1.0])
        assert_array_equal(cdf, [0.0, 1.0, 1.0])

    @pytest.mark.parametrize("value", [0.1, 0.7, 1.3])
    @pytest.mark.parametrize("n, l", [(50, 5), (5000, 100)])
    def test_constant_series_with_inexact_values(self, value, n, l):
        ts = TimeSeries(np.full(n, value))
        assert_array_equal(subsampling_distribution(ts, MEAN, l, [0.0, 1.0]), [1.0, 1.0])
        assert fixedb_pvalue(ts, MEAN, value, l / n).pvalue == 1.0

    def test_distribution_reaches_one(self, iid_series):
        norms = subsample_norms(iid_series, MEAN, 10)
        cdf = subsampling_distribution(iid_series, MEAN, 10, [norms.max() + 1.0, -1.0])
        assert_array_equal(cdf, [1.0, 0.0])


class TestFixedBPvalue:
    def test_one_at_the_estimate(self, iid_series):
        result = fixedb_pvalue(iid_series, MEAN, iid_series.values.mean(), 0.1)
        assert result.pvalue == 1.0
        assert (result.l, result.count) == (20, 181)

    def test_zero_far_from_the_estimate(self, iid_series):
        assert fixedb_pvalue(iid_series, MEAN, 1e6, 0.1).pvalue == 0.0

    def test_pvalue_is_a_count_ratio(self, iid_series):
        result = fixedb_pvalue(iid_series, MEAN, 0.1, 0.1)
        assert result.pvalue * result.count == pytest.approx(result.exceedances)
        assert result.exceedances == np.count_nonzero(result.subsample_norms >= result.statistic)

    def test_scale_invariance(self, iid_series):
        base = fixedb_pvalue(iid_series, MEAN, 0.1, 0.1)
        moved = fixedb_pvalue(iid_series.affine(4.0, 0.0), MEAN, 0.4, 0.1)
        assert moved.pvalue == base.pvalue
        assert moved.statistic == pytest.approx(4.0 * base.statistic)

    def test_monotone_in_distance(self, iid_series):
        center = iid_series.values.mean()
        pvalues = [fixedb_pvalue(iid_series, MEAN, center + delta, 0.1).pvalue for delta in (0.0, 0.05, 0.1, 0.2, 0.5)]
        assert pvalues == sorted(pvalues, reverse=True)

    def test_autocorrelation_needs_longer_blocks(self, iid_series):
        with pytest.raises(DomainError, match="shorter"):
            fixedb_pvalue(iid_series, Functional.autocorrelation(5), 0.0, 0.01)

    def test_theta0_dimension(self, iid_series):
        with pytest.raises(DomainError):
            fixedb_pvalue(iid_series, MEAN, [0.0, 1.0], 0.1)

    def test_bivariate_mean(self, rng):
        ts = TimeSeries(rng.standard_normal((150, 2)))
        result = fixedb_pvalue(ts, MEAN, [0.0, 0.0], 0.2)
        assert 0.0 <= result.pvalue <= 1.0
        assert result.theta_hat.shape == (2,)


class TestCalibratedPvalue:
    @pytest.fixture
    def table(self):
        spec = TableSpec.create("fixedb_limit", 1, {"b": 0.1})
        return CriticalValueTable(spec, (0.1, 0.5, 0.9), (0.05, 0.3, 0.7), reps=10_000, grid=1000, seed=1)

    def test_reads_the_table(self, table):
        assert calibrated_pvalue(manual_result(0.3, 0.1), table) == pytest.approx(0.5)
        assert calibrated_pvalue(manual_result(0.01, 0.1), table) == pytest.approx(0.1)

    def test_refuses_other_b(self, table):
        with pytest.raises(ConfigurationError):
            calibrated_pvalue(manual_result(0.3, 0.2), table)


@pytest.mark.slow
def test_null_pvalues_follow_the_limit():
    observed = [fixedb_pvalue(iid_normal(500, np.random.default_rng(seed)), MEAN, 0.0, 0.1).pvalue for seed in range(1000)]
    limit = simulate_limit(TableSpec.create("fixedb_limit", 1, {"b": 0.1}), 2000, 500, 3).values
    assert stats.ks_2samp(observed, limit).statistic < 0.08
