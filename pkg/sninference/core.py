"""
Core domain types and conventions.

This module holds the value types shared by every other module: the data
matrix, estimator specifications, subsample indices, measures on the
triangle of subsample fractions and the inference configuration. It also
fixes the two conventions the rest of the package relies on: 1-based
subsample indices with the floor correspondence ``j = floor(n s) + 1``,
``k = floor(n t)``, and the "0/0 = 0" rule for empty blocks.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from sninference.errors import ConfigurationError, DomainError, SingularityError

WEIGHT_TOLERANCE = 1e-12
DEFAULT_CONDITION_LIMIT = 1e12


def snap_integer(x):
    """``x`` moved onto the nearest integer when within a few ulps of it."""
    nearest = round(x)
    if abs(x - nearest) <= 1e-9 * max(1.0, abs(x)):
        return float(nearest)
    return x


def snap_floor(x):
    """
    Floor that forgives representation error.

    ``(j / n) * n`` is not always exactly ``j`` in floating point, so values
    within a few ulps of an integer are treated as that integer.

    Args:
        x: Real number

    Returns:
        int: The floor of x
    """
    return math.floor(snap_integer(x))


def alpha_n(n):
    """Convergence rate used throughout: sqrt(n)."""
    return math.sqrt(n)


def replication_rng(seed, replication=0):
    """
    Random generator for one Monte Carlo replication.

    The replication index is mixed into the seed through ``SeedSequence``
    spawn keys, so replication r draws the same numbers whether the
    replications run serially, in batches or on separate workers.

    Args:
        seed: Non-negative 64-bit master seed
        replication: Replication counter

    Returns:
        numpy.random.Generator
    """
    sequence = np.random.SeedSequence(int(seed), spawn_key=(int(replication),))
    return np.random.default_rng(sequence)


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """
    A sample X_1, ..., X_n stored as an n x d matrix (row i = X_i).
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DomainError(f"time series must be a vector or a matrix, got {values.ndim} dimensions")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise DomainError("time series needs at least one observation and one column")
        bad = np.argwhere(~np.isfinite(values))
        if bad.size:
            row, col = bad[0]
            raise DomainError(f"non-finite value at observation {row + 1}, column {col + 1}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]

    def block(self, j, k):
        """Rows X_j, ..., X_k (1-based, inclusive); empty when k < j."""
        return self.values[j - 1:k]

    def reversed(self):
        """The series in reverse time order."""
        return TimeSeries(self.values[::-1])

    def affine(self, scale, shift):
        """The series a * X + c."""
        return TimeSeries(scale * self.values + shift)


MEAN = "mean"
QUANTILE = "quantile"
AUTOCORRELATION = "acf"
COMPOSITE = "composite"


@dataclass(frozen=True)
class Functional:
    """
    A plug-in estimator specification: block of data -> vector in R^p.

    Use the constructors ``Functional.mean()``, ``Functional.quantile(tau)``,
    ``Functional.autocorrelation(lag)`` and ``Functional.composite(...)``.
    """

    kind: str
    tau: float = None
    lag: int = None
    children: tuple = ()

    def __post_init__(self):
        if self.kind == QUANTILE:
            if self.tau is None or not 0.0 < self.tau < 1.0:
                raise DomainError(f"quantile level must lie in (0, 1), got {self.tau}")
        elif self.kind == AUTOCORRELATION:
            if self.lag is None or int(self.lag) != self.lag or self.lag < 1:
                raise DomainError(f"autocorrelation lag must be a positive integer, got {self.lag}")
        elif self.kind == COMPOSITE:
            if not self.children:
                raise DomainError("composite functional needs at least one component")
        elif self.kind != MEAN:
            raise DomainError(f"unknown functional kind {self.kind!r}")

    @classmethod
    def mean(cls):
        return cls(MEAN)

    @classmethod
    def quantile(cls, tau):
        return cls(QUANTILE, tau=float(tau))

    @classmethod
    def autocorrelation(cls, lag):
        return cls(AUTOCORRELATION, lag=int(lag))

    @classmethod
    def composite(cls, *children):
        return cls(COMPOSITE, children=tuple(children))

    @classmethod
    def quantiles(cls, taus):
        """Quantile map over a set of levels, as one composite functional."""
        return cls.composite(*(cls.quantile(tau) for tau in taus))

    @classmethod
    def parse(cls, text):
        """
        Parses the command-line syntax.

        ``mean``, ``quantile:0.5``, ``acf:1``; components joined with ``+``
        form a composite (``quantile:0.25+quantile:0.75``).

        Args:
            text: Functional description

        Returns:
            Functional
        """
        parts = [part.strip() for part in text.split("+") if part.strip()]
        if not parts:
            raise DomainError("empty functional description")
        parsed = [cls._parse_one(part) for part in parts]
        if len(parsed) == 1:
            return parsed[0]
        return cls.composite(*parsed)

    @classmethod
    def _parse_one(cls, text):
        name, _, arg = text.partition(":")
        name = name.lower()
        try:
            if name == MEAN and not arg:
                return cls.mean()
            if name == QUANTILE:
                return cls.quantile(float(arg))
            if name in (AUTOCORRELATION, "autocorrelation"):
                return cls.autocorrelation(int(arg))
        except ValueError as exc:
            if isinstance(exc, DomainError):
                raise
            raise DomainError(f"cannot parse functional {text!r}") from exc
        raise DomainError(f"unknown functional {text!r}; use mean, quantile:TAU or acf:LAG")

    def output_dim(self, d):
        """
        Dimension p of the estimate for d-dimensional observations.

        Raises:
            DomainError: Quantile or autocorrelation on multivariate data
        """
        if self.kind == MEAN:
            return d
        if self.kind in (QUANTILE, AUTOCORRELATION):
            if d != 1:
                raise DomainError(f"{self.kind} functional needs univariate data, got d = {d}")
            return 1
        return sum(child.output_dim(d) for child in self.children)

    def leaves(self):
        """The non-composite components in output order."""
        if self.kind != COMPOSITE:
            return (self,)
        return tuple(leaf for child in self.children for leaf in child.leaves())

    def min_block_length(self):
        """Shortest block on which every component is defined."""
        return max((leaf.lag + 2 if leaf.kind == AUTOCORRELATION else 1) for leaf in self.leaves())

    @property
    def is_mean(self):
        return all(leaf.kind == MEAN for leaf in self.leaves())

    def describe(self):
        """Inverse of ``parse``."""
        if self.kind == MEAN:
            return MEAN
        if self.kind == QUANTILE:
            return f"{QUANTILE}:{self.tau:g}"
        if self.kind == AUTOCORRELATION:
            return f"{AUTOCORRELATION}:{self.lag}"
        return "+".join(child.describe() for child in self.children)


@dataclass(frozen=True, order=True)
class SubsampleIndex:
    """The data block X_j, ..., X_k (1-based, inclusive)."""

    j: int
    k: int

    def validate(self, n):
        if not (1 <= self.j <= self.k <= n):
            raise DomainError(f"subsample index (j={self.j}, k={self.k}) invalid for n = {n}")
        return self

    @property
    def length(self):
        return self.k - self.j + 1


def index_to_fraction(idx, n):
    """
    Converts a subsample index to its fractional pair on the triangle.

    Args:
        idx: SubsampleIndex with 1 <= j <= k <= n
        n: Sample size

    Returns:
        tuple: (s, t) = ((j - 1) / n, k / n)
    """
    idx.validate(n)
    return (idx.j - 1) / n, idx.k / n


def fraction_to_block(s, t, n):
    """
    Snaps a fractional pair to its block (floor(n s) + 1, floor(n t)).

    The block is empty when floor(n s) = floor(n t); callers apply the
    "0/0 = 0" convention in that case.

    Returns:
        tuple: (j, k) with k >= j - 1
    """
    return snap_floor(n * s) + 1, snap_floor(n * t)


def fraction_to_index(s, t, n):
    """Inverse of ``index_to_fraction``; fails on empty blocks."""
    j, k = fraction_to_block(s, t, n)
    return SubsampleIndex(j, k).validate(n)


@dataclass(frozen=True, eq=False)
class DeltaMeasure:
    """
    A discrete probability measure on {(s, t): 0 <= s <= t <= 1}.

    Attributes:
        s, t, w: Equal-length arrays of atom coordinates and weights
        label: Short description used in reports and table metadata
    """

    s: np.ndarray
    t: np.ndarray
    w: np.ndarray
    label: str = "custom"

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.s, dtype=float)).copy()
        t = np.atleast_1d(np.asarray(self.t, dtype=float)).copy()
        w = np.atleast_1d(np.asarray(self.w, dtype=float)).copy()
        if not (s.shape == t.shape == w.shape) or s.ndim != 1 or s.size == 0:
            raise ConfigurationError("measure needs equal-length, non-empty atom arrays")
        if np.any(~np.isfinite(s)) or np.any(~np.isfinite(t)) or np.any(~np.isfinite(w)):
            raise ConfigurationError("measure atoms must be finite")
        if np.any(s < 0.0) or np.any(t > 1.0) or np.any(s > t):
            bad = int(np.argmax((s < 0.0) | (t > 1.0) | (s > t)))
            raise ConfigurationError(f"atom {bad + 1} at ({s[bad]}, {t[bad]}) lies outside the triangle")
        if np.any(w <= 0.0):
            raise ConfigurationError("measure weights must be positive")
        if abs(w.sum() - 1.0) > WEIGHT_TOLERANCE:
            raise ConfigurationError(f"measure weights sum to {w.sum()!r}, not 1")
        for array in (s, t, w):
            array.setflags(write=False)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_weights(cls, s, t, w, label="custom"):
        """Builds a measure after normalizing the weights to sum to one."""
        w = np.asarray(w, dtype=float)
        total = w.sum()
        if not total > 0.0:
            raise ConfigurationError("measure weights must have a positive sum")
        return cls(s, t, w / total, label=label)

    @property
    def size(self):
        return self.s.size

    def atoms(self):
        return list(zip(self.s.tolist(), self.t.tolist(), self.w.tolist()))


@dataclass(frozen=True)
class InferenceConfig:
    """
    Settings shared by the statistics, the limit simulations and the CLI.

    Attributes:
        clip_gamma: Exponent of the n^{-gamma} cut-off for clipped statistics
        rng_seed: Master seed for every randomized operation
        condition_limit: Largest acceptable condition number of a normalizer
        table_dir: Directory holding critical-value tables
        reps: Default Monte Carlo replications per table
        grid: Default Brownian grid size m
        levels: Default quantile levels stored in a table
        bootstrap_replicates: Default bootstrap replicate count B
    """

    clip_gamma: float = 0.1
    rng_seed: int = 20130101
    condition_limit: float = DEFAULT_CONDITION_LIMIT
    table_dir: str = "tables"
    reps: int = 100_000
    grid: int = 1000
    levels: tuple = field(default_factory=lambda: tuple(round(0.001 * i, 3) for i in range(1, 1000)))
    bootstrap_replicates: int = 500

    def __post_init__(self):
        if not 0.0 < self.clip_gamma < 0.5:
            raise ConfigurationError(f"clip_gamma must lie in (0, 1/2), got {self.clip_gamma}")
        if int(self.rng_seed) != self.rng_seed or not 0 <= self.rng_seed < 2**64:
            raise ConfigurationError(f"rng_seed must be a 64-bit non-negative integer, got {self.rng_seed}")
        if not self.condition_limit > 1.0:
            raise ConfigurationError("condition_limit must exceed 1")
        if self.reps < 1 or self.grid < 2 or self.bootstrap_replicates < 1:
            raise ConfigurationError("reps, grid and bootstrap_replicates must be positive (grid >= 2)")
        levels = tuple(float(level) for level in self.levels)
        if not levels or any(not 0.0 < level < 1.0 for level in levels):
            raise ConfigurationError("quantile levels must lie in (0, 1)")
        object.__setattr__(self, "levels", tuple(sorted(set(levels))))

    def clip_threshold(self, n):
        """The subsample-fraction cut-off n^{-gamma}."""
        return n ** (-self.clip_gamma)


def quadratic_form(vector, matrix, condition_limit=DEFAULT_CONDITION_LIMIT, what="normalizer"):
    """
    Computes v' M^{-1} v for a symmetric positive semidefinite M.

    The matrix is inverted through a linear solve after an eigenvalue
    condition check; near-singular matrices fail instead of being
    pseudo-inverted.

    Args:
        vector: Length-p vector v
        matrix: p x p symmetric matrix M
        condition_limit: Largest acceptable condition number
        what: Name of the matrix used in the error message

    Returns:
        tuple: (value, condition_number)

    Raises:
        SingularityError: M is singular or too badly conditioned
    """
    values, conditions, singular = quadratic_forms(
        np.asarray(vector, dtype=float)[None, :],
        np.asarray(matrix, dtype=float)[None, :, :],
        condition_limit,
    )
    if singular[0]:
        raise SingularityError(f"{what} is singular", float(conditions[0]))
    return float(values[0]), float(conditions[0])


def quadratic_forms(vectors, matrices, condition_limit=DEFAULT_CONDITION_LIMIT):
    """
    Batched ``quadratic_form`` without raising.

    Args:
        vectors: Array of shape (..., p)
        matrices: Array of shape (..., p, p), symmetric
        condition_limit: Largest acceptable condition number

    Returns:
        tuple: (values, condition_numbers, singular_mask); values are 0 where singular
    """
    vectors = np.asarray(vectors, dtype=float)
    matrices = np.asarray(matrices, dtype=float)
    p = vectors.shape[-1]
    if p == 1:
        diag = matrices[..., 0, 0]
        singular = ~(diag > 0.0)
        conditions = np.where(singular, np.inf, 1.0)
        safe = np.where(singular, 1.0, diag)
        values = np.where(singular, 0.0, vectors[..., 0] ** 2 / safe)
        return values, conditions, singular

    symmetric = 0.5 * (matrices + np.swapaxes(matrices, -1, -2))
    eigenvalues = np.linalg.eigvalsh(symmetric)
    largest = eigenvalues[..., -1]
    smallest = eigenvalues[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        conditions = np.where(smallest > 0.0, largest / np.where(smallest > 0.0, smallest, 1.0), np.inf)
    singular = ~(largest > 0.0) | ~(conditions <= condition_limit)
    values = np.zeros(vectors.shape[:-1])
    ok = ~singular
    if np.any(ok):
        solved = np.linalg.solve(symmetric[ok], vectors[ok][..., None])[..., 0]
        values[ok] = np.einsum("...i,...i->...", vectors[ok], solved)
    return values, conditions, singular
