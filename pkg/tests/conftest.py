"""Shared fixtures for the test suite."""

import numpy as np
import pytest

from sninference.core import TimeSeries
from sninference.limits import CriticalValueTable, TableSpec

# Monte Carlo quantiles of the SN limit for p = 1 (90%, 95%, 99%)
SN_LIMIT_QUANTILES = {0.9: 28.31, 0.95: 45.4, 0.99: 99.76}


@pytest.fixture
def rng():
    return np.random.default_rng(20130101)


@pytest.fixture(scope="module")
def iid_series():
    """n = 200 iid N(0, 1) observations."""
    return TimeSeries(np.random.default_rng(7).standard_normal(200))


@pytest.fixture
def sn_table():
    """A small hand-made SN limit table for p = 1."""
    spec = TableSpec.create("sn_limit", 1)
    levels = (0.5, 0.9, 0.95, 0.99)
    values = (5.0, SN_LIMIT_QUANTILES[0.9], SN_LIMIT_QUANTILES[0.95], SN_LIMIT_QUANTILES[0.99])
    return CriticalValueTable(spec, levels, values, reps=10_000, grid=1000, seed=1)


@pytest.fixture
def write_csv(tmp_path):
    """Writes text to a CSV file in the test directory and returns its path."""

    def _write(text, name="data.csv"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write
