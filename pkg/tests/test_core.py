"""Tests for the core value types and conventions."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from sninference.core import (
    DeltaMeasure,
    Functional,
    InferenceConfig,
    SubsampleIndex,
    TimeSeries,
    fraction_to_block,
    fraction_to_index,
    index_to_fraction,
    quadratic_form,
    quadratic_forms,
    replication_rng,
    snap_floor,
    snap_integer,
)
from sninference.errors import ConfigurationError, DomainError, SingularityError


class TestIndexConversion:
    @pytest.mark.parametrize(
        "j, k, expected",
        [(1, 10, (0.0, 1.0)), (3, 7, (0.2, 0.7)), (5, 5, (0.4, 0.5))],
    )
    def test_index_to_fraction(self, j, k, expected):
        assert_allclose(index_to_fraction(SubsampleIndex(j, k), 10), expected)

    def test_fraction_to_block_snaps_representation_error(self):
        # 0.7 * 10 is 7.000000000000001 in floating point
        assert fraction_to_block(0.2, 0.7, 10) == (3, 7)

    def test_round_trip_on_lattice(self):
        for j in range(1, 11):
            for k in range(j, 11):
                s, t = index_to_fraction(SubsampleIndex(j, k), 10)
                assert fraction_to_index(s, t, 10) == SubsampleIndex(j, k)

    def test_empty_block(self):
        assert fraction_to_block(0.41, 0.45, 10) == (5, 4)
        with pytest.raises(DomainError):
            fraction_to_index(0.41, 0.45, 10)

    @pytest.mark.parametrize("j, k", [(0, 3), (3, 2), (2, 6)])
    def test_invalid_index(self, j, k):
        with pytest.raises(DomainError):
            SubsampleIndex(j, k).validate(5)

    def test_snap_floor(self):
        assert snap_floor(2.5) == 2
        assert snap_floor(3 * (1 / 3) * 9) == 9
        assert snap_floor(16 ** 0.25) == 2

    def test_snap_integer(self):
        assert 100 * 0.07 > 7
        assert snap_integer(100 * 0.07) == 7.0
        assert snap_integer(7.25) == 7.25
        assert snap_integer(-0.1 * 30) == -3.0


class TestTimeSeries:
    def test_vector_becomes_column(self):
        ts = TimeSeries([1.0, 2.0, 3.0])
        assert (ts.n, ts.d) == (3, 1)
        assert not ts.values.flags.writeable

    def test_rejects_non_finite(self):
        with pytest.raises(DomainError, match="observation 2"):
            TimeSeries([1.0, np.nan, 3.0])

    def test_block_and_reverse(self):
        ts = TimeSeries(np.arange(1.0, 6.0))
        assert_allclose(ts.block(2, 4)[:, 0], [2.0, 3.0, 4.0])
        assert ts.block(3, 2).shape[0] == 0
        assert_allclose(ts.reversed().values[:, 0], [5.0, 4.0, 3.0, 2.0, 1.0])


class TestFunctional:
    def test_parse_and_describe(self):
        for text in ("mean", "quantile:0.5", "acf:2", "quantile:0.25+quantile:0.75"):
            assert Functional.parse(text).describe() == text

    def test_composite_dimension(self):
        f = Functional.quantiles([0.1, 0.5, 0.9])
        assert f.output_dim(1) == 3
        assert Functional.composite(Functional.mean(), Functional.mean()).output_dim(2) == 4

    @pytest.mark.parametrize("text", ["median", "quantile:1.5", "acf:0", "quantile:x", ""])
    def test_parse_rejects(self, text):
        with pytest.raises(DomainError):
            Functional.parse(text)

    def test_quantile_needs_univariate_data(self):
        with pytest.raises(DomainError):
            Functional.quantile(0.5).output_dim(2)

    def test_min_block_length(self):
        assert Functional.mean().min_block_length() == 1
        assert Functional.parse("mean+acf:3").min_block_length() == 5
        assert Functional.parse("mean").is_mean
        assert not Functional.parse("mean+quantile:0.5").is_mean


class TestDeltaMeasure:
    def test_from_weights_normalizes(self):
        H = DeltaMeasure.from_weights([0.0, 0.2], [0.5, 1.0], [1.0, 3.0])
        assert_allclose(H.w, [0.25, 0.75])
        assert H.size == 2
        assert H.atoms()[1] == (0.2, 1.0, 0.75)

    def test_rejects_unnormalized(self):
        with pytest.raises(ConfigurationError):
            DeltaMeasure([0.0], [1.0], [0.5])

    def test_rejects_atoms_outside_triangle(self):
        with pytest.raises(ConfigurationError, match="atom 2"):
            DeltaMeasure.from_weights([0.0, 0.8], [0.5, 0.6], [1.0, 1.0])


class TestInferenceConfig:
    def test_defaults(self):
        config = InferenceConfig()
        assert config.rng_seed == 20130101
        assert config.clip_gamma == 0.1
        assert len(config.levels) == 999
        assert config.levels[0] == 0.001

    def test_levels_sorted_and_deduplicated(self):
        assert InferenceConfig(levels=(0.9, 0.5, 0.9)).levels == (0.5, 0.9)

    @pytest.mark.parametrize(
        "overrides",
        [{"clip_gamma": 0.6}, {"rng_seed": -1}, {"condition_limit": 0.5}, {"grid": 1}, {"levels": (1.5,)}],
    )
    def test_invalid(self, overrides):
        with pytest.raises(ConfigurationError):
            InferenceConfig(**overrides)


class TestQuadraticForm:
    def test_identity(self):
        value, condition = quadratic_form([1.0, 2.0], np.eye(2))
        assert value == pytest.approx(5.0)
        assert condition == pytest.approx(1.0)

    def test_singular_matrix(self):
        with pytest.raises(SingularityError) as info:
            quadratic_form([1.0, 1.0], [[1.0, 1.0], [1.0, 1.0]])
        assert info.value.condition_number == np.inf

    def test_scalar_zero_is_singular(self):
        with pytest.raises(SingularityError):
            quadratic_form([1.0], [[0.0]])

    def test_batched_matches_single(self, rng):
        vectors = rng.standard_normal((5, 3))
        factors = rng.standard_normal((5, 3, 3))
        matrices = factors @ np.swapaxes(factors, -1, -2) + np.eye(3)
        values, _, singular = quadratic_forms(vectors, matrices)
        assert not singular.any()
        for vector, matrix, value in zip(vectors, matrices, values):
            assert value == pytest.approx(vector @ np.linalg.solve(matrix, vector), rel=1e-10)


def test_replication_rng_is_reproducible():
    first = replication_rng(11, 3).standard_normal(4)
    assert_allclose(replication_rng(11, 3).standard_normal(4), first)
    assert not np.allclose(replication_rng(11, 4).standard_normal(4), first)
