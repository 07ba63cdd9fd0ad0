"""
Subsample estimators.

Computes the plug-in estimates theta_hat_{n,j,k} = phi(y_hat_{n,s,t}) on
contiguous blocks of the sample, for single blocks, for all prefixes
(recursive estimates), for all suffixes, and for arbitrary collections of
blocks. Mean-type estimates use prefix sums; quantiles use a Fenwick tree
over order-statistic ranks so a block can be extended one observation at a
time; autocorrelations use running weighted moment sums.

Conventions:
    - An empty block has estimate zero ("0/0 = 0").
    - An estimate that is undefined on a block (an autocorrelation block
      shorter than lag + 2, zero block variance, zero total weight) is stored
      as zero and flagged. Only ``subsample_estimate`` raises for it.
    - Quantiles are left-continuous inverses of the empirical CDF (type 1):
      the order statistic at position ceil(tau * L).
    - Optional multiplier weights follow the bootstrap recipe: mean-type
      sums are weighted and divided by the block length; quantiles and
      autocorrelations use the weights clamped at zero.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from sninference.core import AUTOCORRELATION, MEAN, QUANTILE, SubsampleIndex, snap_integer
from sninference.errors import EstimatorUndefinedError

logger = logging.getLogger(__name__)

# Relative size below which a block variance counts as zero
VARIANCE_TOLERANCE = 1e-12
# Deviations within this many ulps of the centre are floating-point noise
NOISE_ULPS = 64


def type1_position(tau, size):
    """0-based position of the type-1 tau-quantile among ``size`` sorted values."""
    return max(math.ceil(snap_integer(size * tau)) - 1, 0)


@dataclass(frozen=True, eq=False)
class EstimateGrid:
    """
    Estimates for a collection of blocks.

    Attributes:
        functional: The Functional that produced the entries
        n: Sample size
        entries: SubsampleIndex -> estimate vector
        undefined: Indices whose estimate is a flagged zero
        prefix_cache: Prefix sums of the data when the functional is mean-type
    """

    functional: object
    n: int
    entries: dict
    undefined: frozenset = frozenset()
    prefix_cache: np.ndarray = field(default=None, repr=False)

    def __getitem__(self, idx):
        return self.entries[idx]

    def __len__(self):
        return len(self.entries)

    def __contains__(self, idx):
        return idx in self.entries


class _FenwickTree:
    """Binary indexed tree over ranks 1..size holding non-negative weights."""

    def __init__(self, size):
        self.size = size
        self.tree = [0.0] * (size + 1)
        self.top = 1 << (size.bit_length() - 1) if size else 0

    def add(self, rank, weight):
        while rank <= self.size:
            self.tree[rank] += weight
            rank += rank & -rank

    def search(self, target):
        """Smallest rank whose cumulative weight reaches ``target``."""
        position = 0
        step = self.top
        while step:
            nxt = position + step
            if nxt <= self.size and self.tree[nxt] < target:
                position = nxt
                target -= self.tree[nxt]
            step >>= 1
        return position + 1


def prefix_sums(ts, weights=None):
    """
    Cumulative sums of the (optionally weighted) observations.

    Args:
        ts: TimeSeries
        weights: Optional length-n multiplier vector

    Returns:
        ndarray: Shape (n + 1, d); row k holds sum_{i <= k} M_i X_i, row 0 is zero
    """
    values = ts.values if weights is None else ts.values * np.asarray(weights, dtype=float)[:, None]
    sums = np.zeros((ts.n + 1, ts.d))
    np.cumsum(values, axis=0, out=sums[1:])
    return sums


def _mean_path(x, weights):
    counts = np.arange(1, x.shape[0] + 1, dtype=float)[:, None]
    undefined = np.zeros(x.shape[0], dtype=bool)
    if weights is not None:
        return np.cumsum(x * weights[:, None], axis=0) / counts, undefined
    # shifting by x_1 keeps a constant series exact for any n
    origin = x[:1].sum(axis=0)
    return origin + np.cumsum(x - origin, axis=0) / counts, undefined


def _quantile_path(x, tau, weights):
    column = x[:, 0]
    size = column.size
    order = np.argsort(column, kind="stable")
    ranks = np.empty(size, dtype=int)
    ranks[order] = np.arange(1, size + 1)
    sorted_values = column[order]

    unit = weights is None
    clamped = None if unit else np.maximum(weights, 0.0)
    tree = _FenwickTree(size)
    out = np.zeros((size, 1))
    undefined = np.zeros(size, dtype=bool)
    total = 0.0
    for k in range(size):
        weight = 1.0 if unit else float(clamped[k])
        if weight > 0.0:
            tree.add(int(ranks[k]), weight)
            total += weight
        if total <= 0.0:
            undefined[k] = True
            continue
        rank = tree.search(snap_integer(tau * total))
        out[k, 0] = sorted_values[min(rank, size) - 1]
    return out, undefined


def _autocorrelation_path(x, lag, weights):
    column = x[:, 0]
    size = column.size
    w = np.ones(size) if weights is None else np.maximum(weights, 0.0)
    out = np.zeros((size, 1))
    undefined = np.ones(size, dtype=bool)
    if size < lag + 2:
        return out, undefined

    cw = np.cumsum(w)
    cwx = np.cumsum(w * column)
    cwx2 = np.cumsum(w * column ** 2)
    lagged_w = w[:-lag]
    cross = np.cumsum(lagged_w * column[:-lag] * column[lag:])
    lead = np.cumsum(lagged_w * column[lag:])
    head = np.cumsum(lagged_w * column[:-lag])
    head_w = np.cumsum(lagged_w)

    for k in range(lag + 1, size):
        total = cw[k]
        if total <= 0.0:
            continue
        m = cwx[k] / total
        denominator = cwx2[k] - cwx[k] * m
        if denominator <= VARIANCE_TOLERANCE * cwx2[k]:
            continue
        pairs = k - lag
        numerator = cross[pairs] - m * (lead[pairs] + head[pairs]) + m * m * head_w[pairs]
        out[k, 0] = numerator / denominator
        undefined[k] = False
    return out, undefined


def _leaf_path(x, leaf, weights):
    if leaf.kind == MEAN:
        return _mean_path(x, weights)
    if leaf.kind == QUANTILE:
        return _quantile_path(x, leaf.tau, weights)
    return _autocorrelation_path(x, leaf.lag, weights)


def prefix_estimates(x, f, weights=None):
    """
    Estimates on every prefix of a raw block of observations.

    Args:
        x: Array of shape (L, d)
        f: Functional
        weights: Optional length-L multipliers

    Returns:
        tuple: (values of shape (L, p), undefined mask of shape (L,))
    """
    x = np.asarray(x, dtype=float)
    f.output_dim(x.shape[1])
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
    parts, undefined = [], np.zeros(x.shape[0], dtype=bool)
    for leaf in f.leaves():
        values, flags = _leaf_path(x, leaf, weights)
        parts.append(values)
        undefined |= flags
    return np.hstack(parts), undefined


def _leaf_block(x, leaf, weights):
    size = x.shape[0]
    if leaf.kind == MEAN:
        summands = x if weights is None else x * weights[:, None]
        return summands.sum(axis=0) / size

    column = x[:, 0]
    w = None if weights is None else np.maximum(weights, 0.0)
    if w is not None and not w.sum() > 0.0:
        raise EstimatorUndefinedError("block has zero total multiplier weight")

    if leaf.kind == QUANTILE:
        if w is None:
            position = type1_position(leaf.tau, size)
            return np.array([np.partition(column, position)[position]])
        order = np.argsort(column, kind="stable")
        cumulative = np.cumsum(w[order])
        rank = int(np.searchsorted(cumulative, snap_integer(leaf.tau * cumulative[-1]), side="left"))
        return np.array([column[order][min(rank, size - 1)]])

    lag = leaf.lag
    if size < lag + 2:
        raise EstimatorUndefinedError(f"block of length {size} too short for lag-{lag} autocorrelation")
    w = np.ones(size) if w is None else w
    centred = column - np.dot(w, column) / w.sum()
    denominator = np.dot(w, centred ** 2)
    if denominator <= VARIANCE_TOLERANCE * np.dot(w, column ** 2) or denominator == 0.0:
        raise EstimatorUndefinedError("block variance is zero; autocorrelation is singular")
    numerator = np.dot(w[:-lag] * centred[:-lag], centred[lag:])
    return np.array([numerator / denominator])


def block_estimate(x, f, weights=None):
    """
    Estimate on one raw block of observations.

    Args:
        x: Array of shape (L, d); L = 0 gives the zero vector
        f: Functional
        weights: Optional length-L multipliers

    Returns:
        ndarray: Estimate vector of length p

    Raises:
        EstimatorUndefinedError: The estimate is not defined on this block
    """
    x = np.asarray(x, dtype=float)
    p = f.output_dim(x.shape[1])
    if x.shape[0] == 0:
        return np.zeros(p)
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
    return np.concatenate([_leaf_block(x, leaf, weights) for leaf in f.leaves()])


def subsample_estimate(ts, f, idx):
    """
    Computes theta_hat_{n,j,k} from the block X_j, ..., X_k.

    Args:
        ts: TimeSeries
        f: Functional
        idx: SubsampleIndex

    Returns:
        ndarray: Estimate vector in R^p

    Raises:
        DomainError: Invalid index or functional
        EstimatorUndefinedError: Block too short or degenerate for the functional
    """
    idx.validate(ts.n)
    return block_estimate(ts.block(idx.j, idx.k), f)


def recursive_estimates(ts, f, return_mask=False, weights=None):
    """
    Computes the recursive estimates theta_hat_{n,1,k} for k = 1..n.

    Row k - 1 of the result is the estimate on X_1, ..., X_k. Mean-type
    functionals use prefix sums (O(n)); quantiles extend a Fenwick tree one
    observation at a time (O(n log n)).

    Args:
        ts: TimeSeries
        f: Functional
        return_mask: Also return the mask of flagged-zero (undefined) rows
        weights: Optional multipliers (bootstrap recipe)

    Returns:
        ndarray: Shape (n, p), plus the mask when requested
    """
    values, undefined = prefix_estimates(ts.values, f, weights)
    if undefined.any():
        logger.debug("%d of %d recursive estimates undefined, stored as zero", undefined.sum(), ts.n)
    return (values, undefined) if return_mask else values


def reverse_recursive_estimates(ts, f, return_mask=False, weights=None):
    """
    Computes the suffix estimates theta_hat_{n,t,n} for t = 1..n.

    Row t - 1 of the result is the estimate on X_t, ..., X_n. All supported
    functionals are invariant under time reversal of the block, so this is
    the recursive path of the reversed series, read backwards.

    Args:
        ts: TimeSeries
        f: Functional
        return_mask: Also return the mask of flagged-zero rows
        weights: Optional multipliers aligned with ``ts``

    Returns:
        ndarray: Shape (n, p), plus the mask when requested
    """
    reversed_weights = None if weights is None else np.asarray(weights, dtype=float)[::-1]
    values, undefined = prefix_estimates(ts.values[::-1], f, reversed_weights)
    values, undefined = values[::-1].copy(), undefined[::-1].copy()
    return (values, undefined) if return_mask else values


def grid_estimates(ts, f, pairs, weights=None):
    """
    Computes estimates for an arbitrary collection of blocks.

    Mean-type functionals read differences of prefix sums. Other functionals
    group the blocks by their first index and sweep each group once, so every
    block starting at j costs one Fenwick-tree extension.

    Args:
        ts: TimeSeries
        f: Functional
        pairs: Iterable of SubsampleIndex
        weights: Optional multipliers (bootstrap recipe)

    Returns:
        EstimateGrid: Deterministic grid of estimates
    """
    p = f.output_dim(ts.d)
    pairs = sorted({idx.validate(ts.n) for idx in pairs})
    entries, undefined = {}, set()

    if f.is_mean:
        sums = prefix_sums(ts, weights)
        for idx in pairs:
            entries[idx] = (sums[idx.k] - sums[idx.j - 1]) / idx.length
        return EstimateGrid(f, ts.n, entries, frozenset(), sums)

    groups = {}
    for idx in pairs:
        groups.setdefault(idx.j, []).append(idx)
    for j, group in groups.items():
        last = group[-1].k
        block_weights = None if weights is None else np.asarray(weights, dtype=float)[j - 1:last]
        values, flags = prefix_estimates(ts.block(j, last), f, block_weights)
        for idx in group:
            row = idx.k - j
            entries[idx] = values[row] if not flags[row] else np.zeros(p)
            if flags[row]:
                undefined.add(idx)
    if undefined:
        logger.debug("%d of %d grid estimates undefined, stored as zero", len(undefined), len(entries))
    return EstimateGrid(f, ts.n, entries, frozenset(undefined))


def all_blocks(n):
    """Every SubsampleIndex (j, k) with 1 <= j <= k <= n."""
    return [SubsampleIndex(j, k) for j in range(1, n + 1) for k in range(j, n + 1)]


def deviations(estimates, centre):
    """
    Differences ``estimates - centre`` with floating-point noise set to zero.

    Differences within a few ulps of the centre's magnitude carry no
    information; zeroing them makes a constant series give an exactly zero
    normalizer.

    Args:
        estimates: Array of shape (..., p)
        centre: Vector of length p

    Returns:
        ndarray: Same shape as ``estimates``
    """
    estimates = np.asarray(estimates, dtype=float)
    centre = np.asarray(centre, dtype=float)
    diff = estimates - centre
    scale = np.maximum(np.abs(estimates), np.abs(centre))
    noise = NOISE_ULPS * np.finfo(float).eps * scale
    return np.where(np.abs(diff) <= noise, 0.0, diff)
