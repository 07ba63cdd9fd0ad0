"""Tests for the SN statistic, its generalization over measures and the SN interval."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sninference.core import DeltaMeasure, Functional, TimeSeries
from sninference.errors import ConfigurationError, DomainError, SingularityError
from sninference.limits import CriticalValueTable, TableSpec
from sninference.selfnorm import (
    clipped_sn_statistic,
    generalized_sn_matrix,
    generalized_sn_statistic,
    grid_measure,
    load_measure,
    measure_from_spec,
    recursive_measure,
    sn_confidence_interval,
    sn_matrix,
    sn_pvalue,
    sn_statistic,
)
from sninference.simulate import iid_normal

from conftest import SN_LIMIT_QUANTILES

MEAN = Functional.mean()


def naive_sn_matrix(x):
    n, d = x.shape
    full = x.mean(axis=0)
    total = np.zeros((d, d))
    for j in range(1, n + 1):
        dev = x[:j].mean(axis=0) - full
        total += j ** 2 * np.outer(dev, dev)
    return total / n ** 2


class TestSnMatrix:
    def test_hand_example(self):
        assert_allclose(sn_matrix(TimeSeries([0.0, 1.0, 2.0]), MEAN), [[2.0 / 9.0]])

    def test_constant_series_gives_zero(self):
        assert_array_equal(sn_matrix(TimeSeries(np.full(20, 0.1)), MEAN), 0.0)

    def test_matches_naive(self, rng):
        x = rng.standard_normal((200, 2))
        assert_allclose(sn_matrix(TimeSeries(x), MEAN), naive_sn_matrix(x), rtol=0.0, atol=1e-12)

    def test_positive_semidefinite(self, rng):
        matrix = sn_matrix(TimeSeries(rng.standard_normal((100, 3))), MEAN)
        assert_allclose(matrix, matrix.T)
        assert np.linalg.eigvalsh(matrix).min() >= -1e-10

    def test_needs_two_observations(self):
        with pytest.raises(DomainError):
            sn_matrix(TimeSeries([1.0]), MEAN)


class TestSnStatistic:
    def test_hand_example(self):
        result = sn_statistic(TimeSeries([0.0, 1.0, 2.0]), MEAN, 0.0)
        assert result.statistic == pytest.approx(13.5)
        assert result.measure == "recursive"

    def test_zero_at_the_estimate(self, iid_series):
        theta_hat = iid_series.values.mean()
        assert sn_statistic(iid_series, MEAN, theta_hat).statistic == pytest.approx(0.0, abs=1e-20)

    @pytest.mark.parametrize("scale, shift", [(2.5, 3.0), (-0.1, -7.0)])
    def test_affine_invariance(self, iid_series, scale, shift):
        base = sn_statistic(iid_series, MEAN, 0.3).statistic
        moved = sn_statistic(iid_series.affine(scale, shift), MEAN, scale * 0.3 + shift).statistic
        assert moved == pytest.approx(base, rel=1e-10)

    def test_constant_series_is_singular(self):
        with pytest.raises(SingularityError):
            sn_statistic(TimeSeries(np.full(30, 2.0)), MEAN, 0.0)

    def test_theta0_dimension(self, iid_series):
        with pytest.raises(DomainError):
            sn_statistic(iid_series, MEAN, [0.0, 0.0])

    def test_median(self, iid_series):
        result = sn_statistic(iid_series, Functional.quantile(0.5), 0.0)
        assert result.statistic >= 0.0
        assert result.normalizer.shape == (1, 1)

    def test_pvalue_from_table(self, sn_table):
        result = sn_statistic(TimeSeries([0.0, 1.0, 2.0]), MEAN, 0.0)
        assert 0.1 < sn_pvalue(result, sn_table) < 0.5


class TestMeasures:
    def test_recursive_measure(self):
        H = recursive_measure(4)
        assert_allclose(H.t, [0.25, 0.5, 0.75, 1.0])
        assert_allclose(H.w, 0.25)

    def test_grid_measure(self):
        H = grid_measure(10, 2)
        assert H.size == 3
        assert H.label == "grid:2"
        assert_allclose(sorted(zip(H.s, H.t)), [(0.0, 0.5), (0.0, 1.0), (0.5, 1.0)])

    def test_load_measure(self, write_csv):
        path = write_csv("s,t,w\n0,0.5,1\n0.25,1,3\n", "atoms.csv")
        H = load_measure(path)
        assert H.label.startswith("file:")
        assert_allclose(H.w, [0.25, 0.75])

    def test_load_measure_rejects_two_columns(self, write_csv):
        with pytest.raises(ConfigurationError):
            load_measure(write_csv("0,0.5\n", "atoms.csv"))

    def test_measure_from_spec(self):
        assert measure_from_spec("recursive", 5).size == 5
        assert measure_from_spec("grid:3", 30).label == "grid:3"
        with pytest.raises(ConfigurationError):
            measure_from_spec("grid:x", 30)


class TestGeneralized:
    def test_single_full_atom_gives_zero(self, iid_series):
        H = DeltaMeasure([0.0], [1.0], [1.0])
        assert_array_equal(generalized_sn_matrix(iid_series, MEAN, H), 0.0)

    def test_recursive_measure_reproduces_sn_matrix(self, rng):
        ts = TimeSeries(rng.standard_normal((150, 2)))
        assert_allclose(
            generalized_sn_matrix(ts, MEAN, recursive_measure(150)), sn_matrix(ts, MEAN), rtol=0.0, atol=1e-12
        )

    def test_recursive_measure_reproduces_statistic(self, iid_series):
        H = recursive_measure(iid_series.n)
        generalized = generalized_sn_statistic(iid_series, MEAN, 0.1, H).statistic
        assert generalized == pytest.approx(sn_statistic(iid_series, MEAN, 0.1).statistic, rel=1e-10)

    def test_constant_series_gives_zero(self):
        ts = TimeSeries(np.full(40, -1.5))
        assert_array_equal(generalized_sn_matrix(ts, MEAN, grid_measure(40, 5)), 0.0)

    def test_affine_invariance(self, iid_series):
        H = grid_measure(iid_series.n, 6)
        base = generalized_sn_statistic(iid_series, MEAN, 0.0, H).statistic
        moved = generalized_sn_statistic(iid_series.affine(-3.0, 1.0), MEAN, 1.0, H).statistic
        assert moved == pytest.approx(base, rel=1e-10)

    def test_too_few_atoms_is_singular(self, rng):
        ts = TimeSeries(rng.standard_normal((60, 2)))
        H = DeltaMeasure([0.0], [0.5], [1.0])
        with pytest.raises(SingularityError, match="add more atoms"):
            generalized_sn_statistic(ts, MEAN, [0.0, 0.0], H)

    def test_empty_atoms_contribute_nothing(self, iid_series):
        H = DeltaMeasure.from_weights([0.0, 0.5], [0.001, 1.0], [1.0, 1.0])
        result = generalized_sn_statistic(iid_series, MEAN, 0.0, H)
        assert any("empty blocks" in warning for warning in result.warnings)


class TestClipped:
    def test_nothing_clipped_equals_unclipped(self, iid_series):
        H = grid_measure(iid_series.n, 2)
        clipped = clipped_sn_statistic(iid_series, MEAN, 0.2, H, gamma=0.49)
        assert clipped.statistic == generalized_sn_statistic(iid_series, MEAN, 0.2, H).statistic
        assert clipped.clipped
        assert clipped.warnings == ()

    def test_renormalizes_surviving_atoms(self, iid_series):
        H = DeltaMeasure.from_weights([0.0, 0.1], [0.05, 0.9], [1.0, 1.0])
        clipped = clipped_sn_statistic(iid_series, MEAN, 0.2, H, gamma=0.3)
        single = generalized_sn_statistic(iid_series, MEAN, 0.2, DeltaMeasure([0.1], [0.9], [1.0]))
        assert clipped.statistic == pytest.approx(single.statistic, rel=1e-12)
        assert "1 atoms clipped" in clipped.warnings[0]

    def test_all_atoms_clipped(self, iid_series):
        H = DeltaMeasure([0.0], [0.01], [1.0])
        with pytest.raises(ConfigurationError, match="all 1 atoms"):
            clipped_sn_statistic(iid_series, MEAN, 0.0, H, gamma=0.1)

    def test_gamma_range(self, iid_series):
        with pytest.raises(ConfigurationError):
            clipped_sn_statistic(iid_series, MEAN, 0.0, recursive_measure(200), gamma=0.5)


class TestConfidenceInterval:
    def test_contains_estimate_and_widens_with_level(self, iid_series, sn_table):
        narrow = sn_confidence_interval(iid_series, MEAN, 0.9, sn_table)
        wide = sn_confidence_interval(iid_series, MEAN, 0.99, sn_table)
        assert wide.lower < narrow.lower < narrow.theta_hat < narrow.upper < wide.upper
        assert narrow.upper - narrow.theta_hat == pytest.approx(
            np.sqrt(SN_LIMIT_QUANTILES[0.9] * narrow.normalizer / iid_series.n)
        )

    def test_constant_series_is_degenerate(self, sn_table):
        interval = sn_confidence_interval(TimeSeries(np.full(20, 4.0)), MEAN, 0.95, sn_table)
        assert interval.lower == interval.upper == 4.0

    def test_level_range(self, iid_series, sn_table):
        with pytest.raises(DomainError):
            sn_confidence_interval(iid_series, MEAN, 1.0, sn_table)

    def test_refuses_other_tables(self, iid_series):
        table = CriticalValueTable(TableSpec.create("cp_limit", 1), (0.5, 0.95), (2.0, 40.0), 10_000, 1000, 1)
        with pytest.raises(ConfigurationError):
            sn_confidence_interval(iid_series, MEAN, 0.9, table)


@pytest.mark.slow
class TestCalibration:
    def test_null_quantile_matches_limit(self):
        statistics = [
            sn_statistic(iid_normal(500, np.random.default_rng(seed)), MEAN, 0.0).statistic for seed in range(2000)
        ]
        assert np.quantile(statistics, 0.95) == pytest.approx(SN_LIMIT_QUANTILES[0.95], rel=0.1)

    def test_interval_coverage(self, sn_table):
        covered = 0
        for seed in range(2000):
            interval = sn_confidence_interval(iid_normal(500, np.random.default_rng(seed)), MEAN, 0.95, sn_table)
            covered += interval.lower <= 0.0 <= interval.upper
        assert 0.93 <= covered / 2000 <= 0.97


@pytest.mark.parametrize("value", [0.1, 0.7, 1.3])
def test_long_constant_series_is_exactly_singular(value):
    ts = TimeSeries(np.full(20_000, value))
    assert_array_equal(sn_matrix(ts, MEAN), 0.0)
    with pytest.raises(SingularityError):
        sn_statistic(ts, MEAN, value + 0.1)
