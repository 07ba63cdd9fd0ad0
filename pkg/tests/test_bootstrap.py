"""Tests for the multiplier bootstrap."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sninference.bootstrap import (
    BLOCK,
    GAUSSIAN,
    RADEMACHER,
    MultiplierScheme,
    bootstrap_distribution,
    bootstrap_estimate,
    bootstrap_fixedb_pvalue,
    bootstrap_pvalue,
    generate_multipliers,
)
from sninference.core import Functional, SubsampleIndex, TimeSeries
from sninference.errors import BootstrapUnstableError, DomainError, SingularityError
from sninference.estimators import subsample_estimate
from sninference.fixedb import fixedb_pvalue
from sninference.selfnorm import sn_statistic
from sninference.simulate import iid_normal

from conftest import SN_LIMIT_QUANTILES

MEAN = Functional.mean()


def lag_correlation(x, lag):
    return np.corrcoef(x[:-lag], x[lag:])[0, 1]


class TestMultiplierScheme:
    @pytest.mark.parametrize(
        "text, kind, length",
        [("gaussian", GAUSSIAN, None), ("rademacher", RADEMACHER, None), ("block", BLOCK, None), ("block:5", BLOCK, 5)],
    )
    def test_parse(self, text, kind, length):
        scheme = MultiplierScheme.parse(text, seed=3)
        assert (scheme.kind, scheme.block_length, scheme.seed) == (kind, length, 3)
        assert scheme.describe() == text

    @pytest.mark.parametrize("text", ["uniform", "block:x", "rademacher:3", "block:0"])
    def test_parse_rejects(self, text):
        with pytest.raises(DomainError):
            MultiplierScheme.parse(text, seed=3)

    def test_default_block_length(self):
        assert MultiplierScheme(BLOCK, 1).resolved_block_length(100) == 5


class TestMultipliers:
    def test_rademacher_values(self):
        values = generate_multipliers(MultiplierScheme(RADEMACHER, 1), 1000)
        assert set(np.unique(values)) == {0.0, 2.0}

    def test_gaussian_moments(self):
        values = generate_multipliers(MultiplierScheme(GAUSSIAN, 1), 1_000_000)
        assert values.mean() == pytest.approx(1.0, abs=0.005)
        assert values.var() == pytest.approx(1.0, abs=0.01)

    def test_block_dependence_range(self):
        values = generate_multipliers(MultiplierScheme(BLOCK, 1, 5), 100_000)
        assert values.var() == pytest.approx(1.0, abs=0.03)
        assert lag_correlation(values, 1) == pytest.approx(0.8, abs=0.02)
        assert lag_correlation(values, 5) == pytest.approx(0.0, abs=0.02)

    @pytest.mark.parametrize("length", [3, 8])
    def test_no_correlation_beyond_the_block(self, length):
        values = generate_multipliers(MultiplierScheme(BLOCK, 2, length), 1_000_000)
        assert lag_correlation(values, length - 1) == pytest.approx(1.0 / length, abs=0.01)
        assert lag_correlation(values, length + 1) == pytest.approx(0.0, abs=0.01)

    def test_reproducible_per_replication(self):
        scheme = MultiplierScheme(GAUSSIAN, 8)
        assert_array_equal(generate_multipliers(scheme, 50, 4), generate_multipliers(scheme, 50, 4))
        assert not np.array_equal(generate_multipliers(scheme, 50, 4), generate_multipliers(scheme, 50, 5))

    def test_needs_one_multiplier(self):
        with pytest.raises(DomainError):
            generate_multipliers(MultiplierScheme(GAUSSIAN, 8), 0)


class TestBootstrapEstimate:
    def test_unit_multipliers(self, iid_series):
        idx = SubsampleIndex(20, 120)
        assert_allclose(
            bootstrap_estimate(iid_series, MEAN, idx, np.ones(200)), subsample_estimate(iid_series, MEAN, idx), rtol=1e-12
        )

    def test_even_weights(self):
        ts = TimeSeries(np.arange(1.0, 7.0))
        assert_allclose(bootstrap_estimate(ts, MEAN, SubsampleIndex(1, 6), [0, 2, 0, 2, 0, 2]), [4.0])

    def test_multiplier_count(self, iid_series):
        with pytest.raises(DomainError):
            bootstrap_estimate(iid_series, MEAN, SubsampleIndex(1, 10), np.ones(10))


def test_bootstrap_pvalue():
    assert bootstrap_pvalue(0.0, [1.0, 2.0, 3.0]) == 1.0
    assert bootstrap_pvalue(5.0, [1.0]) == 0.5
    assert bootstrap_pvalue(2.0, [1.0, 2.0, 3.0]) == 0.75
    with pytest.raises(DomainError):
        bootstrap_pvalue(1.0, [])


class TestBootstrapDistribution:
    def test_sn(self, iid_series):
        scheme = MultiplierScheme(GAUSSIAN, 2)
        result = bootstrap_distribution(iid_series, MEAN, "sn", scheme, replicates=100, theta0=0.0)
        assert (result.requested, result.failed) == (100, 0)
        assert result.replicates.size == 100
        exceed = np.count_nonzero(result.replicates >= result.observed)
        assert result.pvalue == (1 + exceed) / 101
        assert result.quantile(0.5) <= result.quantile(0.95)

    def test_reproducible(self, iid_series):
        scheme = MultiplierScheme(RADEMACHER, 6)
        first = bootstrap_distribution(iid_series, MEAN, "cp", scheme, replicates=100)
        second = bootstrap_distribution(iid_series, MEAN, "cp", scheme, replicates=100)
        assert_array_equal(first.replicates, second.replicates)
        assert first.observed > 0.0

    def test_block_multipliers_with_median(self, iid_series):
        scheme = MultiplierScheme.parse("block:4", 1)
        result = bootstrap_distribution(iid_series, Functional.quantile(0.5), "sn", scheme, replicates=100, theta0=0.0)
        assert 0.0 < result.pvalue <= 1.0

    def test_fixedb(self, iid_series):
        scheme = MultiplierScheme(GAUSSIAN, 2)
        result = bootstrap_fixedb_pvalue(iid_series, MEAN, 0.1, 0.1, scheme, replicates=100)
        assert result.kind == "fixedb"
        assert result.observed == pytest.approx(1.0 - fixedb_pvalue(iid_series, MEAN, 0.1, 0.1).pvalue)
        assert np.all((result.replicates >= 0.0) & (result.replicates <= 1.0))

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"kind": "sn", "replicates": 99, "theta0": 0.0},
            {"kind": "sn", "replicates": 100},
            {"kind": "fixedb", "replicates": 100, "theta0": 0.0},
            {"kind": "lobato", "replicates": 100},
            {"kind": "sn", "replicates": 100, "theta0": [0.0, 1.0]},
        ],
    )
    def test_rejects(self, iid_series, kwargs):
        with pytest.raises(DomainError):
            bootstrap_distribution(iid_series, MEAN, scheme=MultiplierScheme(GAUSSIAN, 1), **kwargs)

    def test_unstable(self):
        ts = TimeSeries([1.0, 3.0, 2.0])
        scheme = MultiplierScheme(RADEMACHER, 1)
        with pytest.raises(BootstrapUnstableError):
            bootstrap_distribution(ts, Functional.quantile(0.5), "sn", scheme, replicates=200, theta0=0.0)

    @pytest.mark.parametrize("theta0", [0.1, 0.2])
    def test_constant_series_is_singular(self, theta0):
        ts = TimeSeries(np.full(200, 0.1))
        with pytest.raises(SingularityError):
            bootstrap_distribution(ts, MEAN, "sn", MultiplierScheme(GAUSSIAN, 1), replicates=100, theta0=theta0)

    def test_constant_series_cp_is_singular(self):
        ts = TimeSeries(np.full(200, 0.7))
        with pytest.raises(SingularityError):
            bootstrap_distribution(ts, MEAN, "cp", MultiplierScheme(GAUSSIAN, 1), replicates=100)

    def test_observed_matches_sn_statistic(self, iid_series):
        result = bootstrap_distribution(iid_series, MEAN, "sn", MultiplierScheme(GAUSSIAN, 3), replicates=100, theta0=0.1)
        assert result.observed == pytest.approx(sn_statistic(iid_series, MEAN, 0.1).statistic, rel=1e-12)


@pytest.mark.slow
def test_sn_bootstrap_quantile_matches_limit():
    quantiles = [
        bootstrap_distribution(
            iid_normal(500, np.random.default_rng(seed)), MEAN, "sn", MultiplierScheme(GAUSSIAN, seed), replicates=500, theta0=0.0
        ).quantile(0.95)
        for seed in range(50)
    ]
    assert np.mean(quantiles) == pytest.approx(SN_LIMIT_QUANTILES[0.95], rel=0.1)
