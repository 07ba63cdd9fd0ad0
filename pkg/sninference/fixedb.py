"""
Fixed-b subsampling p-values.

With b = l / n held fixed, the p-value compares the full-sample statistic
sqrt(n) ||theta_hat - theta0|| with the overlapping subsample deviations
sqrt(l) ||theta_hat_{j,j+l-1} - theta_hat||, j = 1..N, N = n - l + 1. Its null
distribution converges to the law of G(b), which the limits module
tabulates; ``calibrated_pvalue`` reads that table.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from sninference.core import SubsampleIndex, snap_floor
from sninference.errors import DomainError, EstimatorUndefinedError
from sninference.estimators import deviations, grid_estimates, prefix_sums, subsample_estimate

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FixedBResult:
    """
    Fixed-b subsampling p-value.

    Attributes:
        pvalue: exceedances / count
        b: Requested subsample fraction
        l: Block length round(b n)
        count: Number of subsamples N = n - l + 1
        exceedances: Subsamples whose norm is at least the statistic
        statistic: sqrt(n) ||theta_hat - theta0||
        subsample_norms: sqrt(l) ||theta_hat_{j,j+l-1} - theta_hat||, j = 1..N
        theta_hat: Full-sample estimate
        theta0: Hypothesized value
    """

    pvalue: float
    b: float
    l: int
    count: int
    exceedances: int
    statistic: float
    subsample_norms: np.ndarray = field(repr=False)
    theta_hat: np.ndarray = None
    theta0: np.ndarray = None


def block_length(b, n):
    """l = round(b n), half-up, clamped below at 1."""
    if not 0.0 < b <= 1.0:
        raise DomainError(f"b must lie in (0, 1], got {b}")
    return max(snap_floor(b * n + 0.5), 1)


def window_estimates(ts, f, l, weights=None):
    """
    Estimates on the N = n - l + 1 overlapping windows of length l.

    Mean-type functionals use prefix sums; the others sweep each window.

    Args:
        ts: TimeSeries
        f: Functional
        l: Window length, 1 <= l <= n
        weights: Optional bootstrap multipliers

    Returns:
        ndarray: Shape (N, p)
    """
    n = ts.n
    if not 1 <= l <= n:
        raise DomainError(f"window length l = {l} must lie in [1, {n}]")
    if f.is_mean:
        if weights is not None:
            sums = prefix_sums(ts, weights)
            return (sums[l:] - sums[:-l]) / l
        # sums of x_i - x_1 keep a constant series exact for any n
        origin = ts.values[0]
        sums = np.zeros((n + 1, ts.d))
        np.cumsum(ts.values - origin, axis=0, out=sums[1:])
        return origin + (sums[l:] - sums[:-l]) / l
    windows = [SubsampleIndex(j, j + l - 1) for j in range(1, n - l + 2)]
    grid = grid_estimates(ts, f, windows, weights)
    if grid.undefined:
        first = min(grid.undefined)
        raise EstimatorUndefinedError(f"estimate undefined on window ({first.j}, {first.k})")
    return np.array([grid[window] for window in windows])


def subsample_norms(ts, f, l, theta_hat=None):
    """sqrt(l) ||theta_hat_{j,j+l-1} - theta_hat||, j = 1..N."""
    if theta_hat is None:
        theta_hat = subsample_estimate(ts, f, SubsampleIndex(1, ts.n))
    windows = window_estimates(ts, f, l)
    return np.sqrt(l) * np.linalg.norm(deviations(windows, theta_hat), axis=1)


def subsampling_distribution(ts, f, l, x_grid):
    """
    The subsampling CDF L_{n,l}(x) = N^{-1} #{j: norm_j <= x}.

    Args:
        ts: TimeSeries
        f: Functional
        l: Window length
        x_grid: Evaluation points

    Returns:
        ndarray: CDF values in [0, 1], one per point of ``x_grid``
    """
    norms = np.sort(subsample_norms(ts, f, l))
    x_grid = np.asarray(x_grid, dtype=float)
    return np.searchsorted(norms, x_grid, side="right") / norms.size


def fixedb_pvalue(ts, f, theta0, b):
    """
    Computes the fixed-b p-value p_hat_n(b) for H0: theta = theta0.

    Args:
        ts: TimeSeries
        f: Functional
        theta0: Hypothesized parameter
        b: Subsample fraction in (0, 1]

    Returns:
        FixedBResult
    """
    n = ts.n
    l = block_length(b, n)
    if l < f.min_block_length():
        raise DomainError(f"block length {l} is shorter than {f.min_block_length()} needed by {f.describe()}")
    theta_hat = subsample_estimate(ts, f, SubsampleIndex(1, n))
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if theta0.shape != theta_hat.shape:
        raise DomainError(f"theta0 must have {theta_hat.size} components, got {theta0.size}")

    norms = subsample_norms(ts, f, l, theta_hat)
    statistic = float(np.sqrt(n) * np.linalg.norm(deviations(theta_hat, theta0)))
    exceedances = int(np.count_nonzero(statistic <= norms))
    logger.debug("fixed-b: l = %d, N = %d, %d exceedances", l, norms.size, exceedances)
    return FixedBResult(
        pvalue=exceedances / norms.size,
        b=b,
        l=l,
        count=norms.size,
        exceedances=exceedances,
        statistic=statistic,
        subsample_norms=norms,
        theta_hat=theta_hat,
        theta0=theta0,
    )


def calibrated_pvalue(result, table):
    """
    P(G(b) <= p_hat_n(b)) from the fixed-b limit table.

    Small values reject; the raw p-value is not uniform under the null.

    Args:
        result: FixedBResult
        table: CriticalValueTable of the fixed-b limit at the same b

    Returns:
        float
    """
    table.check_compatible("fixedb_limit", result.theta_hat.size, {"b": result.b})
    return table.cdf(result.pvalue)
