"""
Sequential empirical processes.

Evaluates Y_n(s, t, y) = (t - s) sqrt(n) (F_block(y) - F(y)) for the
indicator class {u -> I{u <= y}} on a grid of (s, t) pairs and levels y,
checks the algebraic two-parameter representation of the block means, and
reproduces the example in which the unclipped process diverges because a
few huge observations sit at the start of the sample.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from sninference.core import Functional, InferenceConfig, SubsampleIndex, alpha_n, replication_rng, snap_floor
from sninference.errors import DomainError, IdentityFailureError
from sninference.estimators import recursive_estimates, subsample_estimate, type1_position
from sninference.simulate import planted_count, planted_outliers

logger = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 200
RANDOM_PAIRS = 10_000


@dataclass(frozen=True, eq=False)
class SeqProcessValues:
    """
    Values of the sequential empirical process.

    Attributes:
        y_grid: Indicator levels
        st_grid: (s, t) pairs
        values: Array of shape (len(st_grid), len(y_grid))
    """

    y_grid: np.ndarray
    st_grid: tuple
    values: np.ndarray = field(repr=False)


def _snap_floor_array(x):
    nearest = np.rint(x)
    close = np.abs(x - nearest) <= 1e-9 * np.maximum(1.0, np.abs(x))
    return np.where(close, nearest, np.floor(x)).astype(int)


def sequential_process(ts, y_grid, st_grid, reference_cdf):
    """
    Evaluates Y_n(s, t, y) from one sort and a prefix-count table.

    Args:
        ts: Univariate TimeSeries
        y_grid: Nondecreasing levels y
        st_grid: Iterable of (s, t) pairs in the triangle
        reference_cdf: Values F(y) on ``y_grid``, or a callable F

    Returns:
        SeqProcessValues
    """
    if ts.d != 1:
        raise DomainError("the indicator process needs univariate data")
    y_grid = np.atleast_1d(np.asarray(y_grid, dtype=float))
    if np.any(np.diff(y_grid) < 0.0):
        raise DomainError("y grid must be sorted")
    reference = reference_cdf(y_grid) if callable(reference_cdf) else reference_cdf
    reference = np.broadcast_to(np.asarray(reference, dtype=float), y_grid.shape)
    if np.any((reference < 0.0) | (reference > 1.0)) or np.any(np.diff(reference) < 0.0):
        raise DomainError("reference CDF values must be nondecreasing within [0, 1]")

    n = ts.n
    pairs = tuple((float(s), float(t)) for s, t in st_grid)
    for s, t in pairs:
        if not 0.0 <= s <= t <= 1.0:
            raise DomainError(f"pair ({s}, {t}) lies outside the triangle")

    # first level index with X_i <= y
    first_level = np.searchsorted(y_grid, ts.values[:, 0], side="left")
    counts = np.zeros((n + 1, y_grid.size))
    hits = np.zeros((n, y_grid.size + 1))
    hits[np.arange(n), first_level] = 1.0
    np.cumsum(np.cumsum(hits, axis=1)[:, :-1], axis=0, out=counts[1:])

    values = np.zeros((len(pairs), y_grid.size))
    if pairs:
        s, t = np.array(pairs).T
        starts = _snap_floor_array(n * s)
        ends = _snap_floor_array(n * t)
        lengths = ends - starts
        filled = lengths > 0
        block_counts = counts[ends[filled]] - counts[starts[filled]]
        values[filled] = (block_counts - lengths[filled, None] * reference) / math.sqrt(n)
    return SeqProcessValues(y_grid, pairs, values)


@dataclass(frozen=True)
class IdentityReport:
    """Outcome of the block-mean representation check."""

    pairs_checked: int
    max_violation: float
    worst_pair: tuple
    tolerance: float


def _check_pairs(n, st_grid, seed):
    if st_grid is not None:
        return np.asarray(st_grid, dtype=float).reshape(-1, 2)
    if n <= EXHAUSTIVE_LIMIT:
        a, c = np.triu_indices(n + 1)
        return np.column_stack((a / n, c / n))
    rng = replication_rng(seed, n)
    ends = np.sort(rng.integers(0, n + 1, size=(RANDOM_PAIRS, 2)), axis=1)
    return ends / n


def prop1_identity_check(ts, f=None, tolerance=1e-12, x=None, st_grid=None, seed=None):
    """
    Checks y_hat_{s,t} - x = n / ((floor(nt) - floor(ns)) v 1) *
    ((floor(nt)/n)(x_hat_t - x) - (floor(ns)/n)(x_hat_s - x)).

    The left side is the directly computed block mean; the right side uses
    the recursive means x_hat_u = theta_hat_{1, floor(nu)}. Empty blocks
    count as zero on both sides.

    Args:
        ts: TimeSeries
        f: Mean functional (the default)
        tolerance: Largest acceptable relative violation
        x: Centre (defaults to zero)
        st_grid: Pairs to check; defaults to every lattice pair for
            n <= 200 and 10^4 random lattice pairs otherwise
        seed: Seed for the random pairs

    Returns:
        IdentityReport

    Raises:
        IdentityFailureError: The violation exceeds ``tolerance``
    """
    f = f or Functional.mean()
    if not f.is_mean:
        raise DomainError("the block-mean representation needs a mean functional")
    n, d = ts.n, ts.d
    x = np.zeros(d) if x is None else np.broadcast_to(np.asarray(x, dtype=float), (d,))
    seed = InferenceConfig().rng_seed if seed is None else seed
    pairs = _check_pairs(n, st_grid, seed)

    recursive = np.vstack((np.zeros((1, d)), recursive_estimates(ts, f)))
    starts = _snap_floor_array(n * pairs[:, 0])
    ends = _snap_floor_array(n * pairs[:, 1])
    data_scale = float(np.max(np.abs(ts.values)))

    worst, worst_pair = 0.0, (0.0, 0.0)
    for (s, t), a, c in zip(pairs, starts, ends):
        if c > a:
            left = subsample_estimate(ts, f, SubsampleIndex(a + 1, c)) - x
        else:
            left = np.zeros(d)
        later = (c / n) * (recursive[c] - x) if c else np.zeros(d)
        earlier = (a / n) * (recursive[a] - x) if a else np.zeros(d)
        factor = n / max(c - a, 1)
        right = factor * (later - earlier)
        scale = np.maximum.reduce([np.abs(left), np.abs(right), factor * (np.abs(later) + np.abs(earlier))])
        scale = np.maximum(scale, data_scale)
        violation = float(np.max(np.abs(left - right) / np.where(scale > 0.0, scale, 1.0)))
        if violation > worst:
            worst, worst_pair = violation, (float(s), float(t))

    report = IdentityReport(len(pairs), worst, worst_pair, tolerance)
    if worst > tolerance:
        raise IdentityFailureError(
            f"block-mean representation violated by {worst:.3g} at (s, t) = {worst_pair} (tolerance {tolerance:g})"
        )
    logger.info("representation holds on %d pairs, max violation %.3g", len(pairs), worst)
    return report


# Divergence example


@dataclass(frozen=True)
class CounterexampleRow:
    """
    One sample size of the divergence example.

    Attributes:
        n: Sample size
        prefix_length: floor(n * n^{-3/4}) = floor(n^{1/4})
        planted: Number of planted observations equal to n
        value: sqrt(n) (L / n) (median of the prefix - 1/2)
        closed_form: n^{-1/4} (n - 1/2) when the prefix is fully planted, else None
        clipped_value: The same quantity with the n^{-gamma/2} cut-off applied
    """

    n: int
    prefix_length: int
    planted: int
    value: float
    closed_form: float = None
    clipped_value: float = 0.0


def counterexample_demo(n_values, seed=None, gamma=None):
    """
    Evaluates V_n(0, n^{-3/4}) for the median on planted-outlier samples.

    Observations 1 <= j < n^{1/3} equal n, the rest are U[0, 1]. Whenever
    the prefix of length floor(n^{1/4}) holds only planted points, the value
    is n^{-1/4} (n - 1/2), which diverges.

    Args:
        n_values: Sample sizes (each >= 2)
        seed: Seed for the uniform observations
        gamma: Clipping exponent for ``clipped_value``

    Returns:
        list of CounterexampleRow
    """
    config = InferenceConfig()
    seed = config.rng_seed if seed is None else seed
    gamma = config.clip_gamma if gamma is None else gamma
    median = Functional.quantile(0.5)
    rows = []
    for n in n_values:
        n = int(n)
        if n < 2:
            raise DomainError(f"sample size must be >= 2, got {n}")
        ts = planted_outliers(n, replication_rng(seed, n))
        length = snap_floor(n ** 0.25)
        planted = planted_count(n)
        prefix = np.sort(ts.values[:length, 0])
        centre = prefix[type1_position(0.5, length)]
        fraction = length / n
        value = alpha_n(n) * fraction * (centre - 0.5)
        closed = n ** -0.25 * (n - 0.5) if length <= planted else None
        clipped = value if fraction >= n ** (-gamma / 2.0) else 0.0
        rows.append(CounterexampleRow(n, length, planted, float(value), closed, float(clipped)))
        logger.debug("n = %d: value %.6g", n, value)
    return rows


def kiefer_muller_covariance(t, y, t2, y2):
    """
    Covariance min(t, t') (min(y, y') - y y') of the Kiefer-Muller process,
    the limit of Y_n(0, t, y) for iid uniform data.
    """
    return np.minimum(t, t2) * (np.minimum(y, y2) - np.asarray(y) * np.asarray(y2))


def clipped_deviation(ts, f, theta, gamma=None):
    """
    The clipped recursive process (k/n) I{k/n >= n^{-gamma/2}} sqrt(n) (theta_hat_{1,k} - theta).

    Args:
        ts: TimeSeries
        f: Functional
        theta: Centre (true parameter)
        gamma: Clipping exponent; defaults to the configured one

    Returns:
        ndarray: Shape (n, p), row k - 1 for the prefix of length k
    """
    gamma = InferenceConfig().clip_gamma if gamma is None else gamma
    if not 0.0 < gamma < 1.0:
        raise DomainError(f"gamma must lie in (0, 1), got {gamma}")
    n = ts.n
    estimates = recursive_estimates(ts, f)
    fractions = np.arange(1, n + 1) / n
    keep = fractions >= n ** (-gamma / 2.0)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return np.where(keep[:, None], fractions[:, None] * alpha_n(n) * (estimates - theta), 0.0)

