"""
Self-normalized statistics.

The SN statistic G_n studentizes the full-sample estimate by the matrix V_n
built from the recursive estimates, so no long-run variance (and no
bandwidth) has to be estimated. The generalized statistic G_n(H) replaces
the recursive blocks by the atoms of a discrete measure H on the triangle
of subsample fractions, and the clipped statistic drops atoms whose
fraction t - s is at most n^{-gamma}.

Normalizer scaling: an atom (s, t) snaps to the block (j, k) with
length fraction l = (k - j + 1) / n and contributes
n * w * d d' with d = l * (theta_hat_{j,k} - theta_hat_{1,n}). With H uniform on
{(0, j/n)} this is exactly V_n.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from sninference.core import DeltaMeasure, InferenceConfig, SubsampleIndex, fraction_to_block, quadratic_form, snap_floor
from sninference.errors import ConfigurationError, DomainError, EstimatorUndefinedError
from sninference.estimators import deviations, grid_estimates, recursive_estimates

logger = logging.getLogger(__name__)

RECURSIVE = "recursive"
GRID_PREFIX = "grid:"
FILE_PREFIX = "file:"


@dataclass(frozen=True, eq=False)
class SnResult:
    """
    Outcome of an SN test.

    Attributes:
        statistic: n (theta_hat - theta0)' V^{-1} (theta_hat - theta0)
        normalizer: The p x p matrix V used
        theta_hat: Full-sample estimate
        theta0: Hypothesized value
        n: Sample size
        clipped: Whether small-fraction atoms were removed
        gamma: Clipping exponent (None when not clipped)
        condition_number: Condition number of the normalizer
        measure: Label of the measure H ("recursive" for V_n)
        warnings: Notes for the report (clipped atoms, undefined estimates)
    """

    statistic: float
    normalizer: np.ndarray
    theta_hat: np.ndarray
    theta0: np.ndarray
    n: int
    clipped: bool = False
    gamma: float = None
    condition_number: float = 1.0
    measure: str = RECURSIVE
    warnings: tuple = field(default=())


@dataclass(frozen=True)
class ConfidenceInterval:
    """Scalar SN confidence interval theta_hat -/+ sqrt(q * V_n / n)."""

    lower: float
    upper: float
    level: float
    critical_value: float
    theta_hat: float
    normalizer: float


def _as_theta0(theta0, p):
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if theta0.shape != (p,):
        raise DomainError(f"theta0 must have {p} components, got {theta0.size}")
    if not np.all(np.isfinite(theta0)):
        raise DomainError("theta0 must be finite")
    return theta0


def _full_estimate(values, undefined):
    if undefined[-1]:
        raise EstimatorUndefinedError("full-sample estimate is undefined")
    return values[-1]


def _recursive_deviations(ts, f):
    values, undefined = recursive_estimates(ts, f, return_mask=True)
    theta_hat = _full_estimate(values, undefined)
    dev = deviations(values, theta_hat)
    dev[undefined] = 0.0
    return theta_hat, dev, int(undefined.sum())


def _symmetrize(matrix):
    return 0.5 * (matrix + matrix.T)


def sn_matrix(ts, f):
    """
    The self-normalization matrix V_n = n^{-2} sum_j j^2 (theta_hat_{1,j} - theta_hat_{1,n})(...)'.

    Undefined recursive estimates (autocorrelation prefixes shorter than
    lag + 2) contribute nothing.

    Args:
        ts: TimeSeries with n >= 2
        f: Functional

    Returns:
        ndarray: Symmetric positive semidefinite p x p matrix
    """
    if ts.n < 2:
        raise DomainError("the SN normalizer needs n >= 2")
    _, dev, _ = _recursive_deviations(ts, f)
    return _normalizer_from_deviations(dev)


def _normalizer_from_deviations(dev):
    n = dev.shape[0]
    scaled = np.arange(1, n + 1, dtype=float)[:, None] * dev
    return _symmetrize(scaled.T @ scaled) / n ** 2


def _statistic(vector, matrix, n, config, what):
    value, condition = quadratic_form(vector, matrix, config.condition_limit, what)
    return max(n * value, 0.0), condition


def sn_statistic(ts, f, theta0, config=None):
    """
    Computes the SN statistic G_n for H0: theta = theta0.

    Args:
        ts: TimeSeries
        f: Functional
        theta0: Hypothesized parameter (length p)
        config: Optional InferenceConfig (condition limit)

    Returns:
        SnResult

    Raises:
        SingularityError: V_n is singular, e.g. for a constant series
    """
    config = config or InferenceConfig()
    if ts.n < 2:
        raise DomainError("the SN statistic needs n >= 2")
    theta_hat, dev, undefined = _recursive_deviations(ts, f)
    theta0 = _as_theta0(theta0, theta_hat.size)
    normalizer = _normalizer_from_deviations(dev)
    statistic, condition = _statistic(theta_hat - theta0, normalizer, ts.n, config, "SN normalizer V_n")
    warnings = (f"{undefined} undefined recursive estimates contribute zero",) if undefined else ()
    return SnResult(statistic, normalizer, theta_hat, theta0, ts.n, condition_number=condition, warnings=warnings)


def sn_pvalue(result, table):
    """Upper-tail p-value of an SN result from a critical-value table."""
    return table.upper_tail(result.statistic)


# Measure construction


def recursive_measure(n):
    """Uniform measure on {(0, j/n): j = 1..n}; V_n(H) then equals V_n."""
    if n < 1:
        raise ConfigurationError("recursive measure needs n >= 1")
    s = np.zeros(n)
    t = np.arange(1, n + 1, dtype=float) / n
    return DeltaMeasure.from_weights(s, t, np.ones(n), label=RECURSIVE)


def grid_measure(n, points):
    """
    Uniform measure on an equispaced grid of the triangle.

    The pairs (a/K, b/K), 0 <= a < b <= K, are snapped to the n-lattice;
    pairs that snap to the same block are merged.

    Args:
        n: Sample size (or Brownian grid size)
        points: Grid resolution K >= 1

    Returns:
        DeltaMeasure
    """
    if points < 1:
        raise ConfigurationError(f"grid measure needs K >= 1, got {points}")
    pairs = set()
    for a in range(points):
        for b in range(a + 1, points + 1):
            j = snap_floor(n * a / points)
            k = snap_floor(n * b / points)
            if k > j:
                pairs.add((j, k))
    ordered = sorted(pairs)
    s = np.array([j for j, _ in ordered], dtype=float) / n
    t = np.array([k for _, k in ordered], dtype=float) / n
    return DeltaMeasure.from_weights(s, t, np.ones(len(ordered)), label=f"{GRID_PREFIX}{points}")


def load_measure(path):
    """
    Reads a measure from a CSV file of atoms ``s,t,w``.

    An optional header row is skipped; weights are normalized to sum to one.

    Args:
        path: Atom file

    Returns:
        DeltaMeasure labelled ``file:<digest>`` with the file's SHA-256 prefix
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
        frame = pd.read_csv(path, header=None, dtype=str, comment="#", skip_blank_lines=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ConfigurationError(f"cannot read measure file {path}: {exc}") from exc
    if frame.shape[1] != 3:
        raise ConfigurationError(f"measure file {path} needs three columns s,t,w")
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    if numeric.iloc[0].isna().any():
        numeric = numeric.iloc[1:]
    if numeric.empty or numeric.isna().any().any():
        raise ConfigurationError(f"measure file {path} has non-numeric atoms")
    digest = hashlib.sha256(raw).hexdigest()[:16]
    atoms = numeric.to_numpy(dtype=float)
    return DeltaMeasure.from_weights(atoms[:, 0], atoms[:, 1], atoms[:, 2], label=f"{FILE_PREFIX}{digest}")


def measure_from_spec(text, n):
    """
    Builds H from its command-line description.

    Args:
        text: ``recursive``, ``grid:K`` or a path to an atom file
        n: Lattice size the measure is snapped to

    Returns:
        DeltaMeasure
    """
    if text == RECURSIVE:
        return recursive_measure(n)
    if text.startswith(GRID_PREFIX):
        try:
            points = int(text[len(GRID_PREFIX):])
        except ValueError as exc:
            raise ConfigurationError(f"cannot parse measure {text!r}; use grid:K") from exc
        return grid_measure(n, points)
    return load_measure(text)


# Generalized statistic


def measure_blocks(n, H):
    """Snapped blocks of the atoms of H; empty blocks map to None."""
    blocks = []
    for s, t in zip(H.s, H.t):
        j, k = fraction_to_block(s, t, n)
        blocks.append(SubsampleIndex(j, k) if k >= j else None)
    return blocks


def _generalized_normalizer(ts, f, H):
    n = ts.n
    blocks = measure_blocks(n, H)
    grid = grid_estimates(ts, f, [block for block in blocks if block is not None] + [SubsampleIndex(1, n)])
    full = SubsampleIndex(1, n)
    if full in grid.undefined:
        raise EstimatorUndefinedError("full-sample estimate is undefined")
    theta_hat = grid[full]

    p = theta_hat.size
    scaled = np.zeros((len(blocks), p))
    empty = undefined = 0
    for i, block in enumerate(blocks):
        if block is None:
            empty += 1
            continue
        if block in grid.undefined:
            undefined += 1
            continue
        scaled[i] = (block.length / n) * deviations(grid[block], theta_hat)
    weighted = scaled * H.w[:, None]
    normalizer = _symmetrize(n * (weighted.T @ scaled))

    warnings = []
    if empty:
        warnings.append(f"{empty} atoms snap to empty blocks and contribute zero")
    if undefined:
        warnings.append(f"{undefined} atoms have undefined estimates and contribute zero")
    return theta_hat, normalizer, tuple(warnings)


def generalized_sn_matrix(ts, f, H):
    """
    The generalized normalizer V_n(H).

    Args:
        ts: TimeSeries
        f: Functional
        H: DeltaMeasure on the triangle

    Returns:
        ndarray: Symmetric positive semidefinite p x p matrix
    """
    return _generalized_normalizer(ts, f, H)[1]


def generalized_sn_statistic(ts, f, theta0, H, config=None):
    """
    Computes G_n(H) = n (theta_hat - theta0)' V_n(H)^{-1} (theta_hat - theta0).

    Raises:
        SingularityError: V_n(H) is singular; H needs more distinct atoms
    """
    config = config or InferenceConfig()
    theta_hat, normalizer, warnings = _generalized_normalizer(ts, f, H)
    theta0 = _as_theta0(theta0, theta_hat.size)
    what = f"V_n(H) for H = {H.label} with {H.size} atoms (add more atoms)"
    statistic, condition = _statistic(theta_hat - theta0, normalizer, ts.n, config, what)
    return SnResult(
        statistic, normalizer, theta_hat, theta0, ts.n,
        condition_number=condition, measure=H.label, warnings=warnings,
    )


def clipped_sn_statistic(ts, f, theta0, H, gamma=None, config=None):
    """
    The clipped statistic: atoms with t - s <= n^{-gamma} are removed and the
    remaining weights renormalized.

    Args:
        ts: TimeSeries
        f: Functional
        theta0: Hypothesized parameter
        H: DeltaMeasure
        gamma: Clipping exponent in (0, 1/2); defaults to the config's
        config: Optional InferenceConfig

    Returns:
        SnResult with ``clipped`` set

    Raises:
        ConfigurationError: Every atom is clipped
    """
    config = config or InferenceConfig()
    gamma = config.clip_gamma if gamma is None else gamma
    if not 0.0 < gamma < 0.5:
        raise ConfigurationError(f"gamma must lie in (0, 1/2), got {gamma}")
    threshold = ts.n ** (-gamma)
    keep = (H.t - H.s) > threshold
    if not keep.any():
        raise ConfigurationError(f"all {H.size} atoms of H have t - s <= n^-gamma = {threshold:.4g}")

    dropped = int((~keep).sum())
    measure = H
    if dropped:
        logger.info("clipping %d of %d atoms below %.4g", dropped, H.size, threshold)
        measure = DeltaMeasure.from_weights(H.s[keep], H.t[keep], H.w[keep], label=H.label)
    result = generalized_sn_statistic(ts, f, theta0, measure, config)
    warnings = result.warnings + ((f"{dropped} atoms clipped at n^-gamma = {threshold:.4g}",) if dropped else ())
    return SnResult(
        result.statistic, result.normalizer, result.theta_hat, result.theta0, ts.n,
        clipped=True, gamma=gamma, condition_number=result.condition_number,
        measure=H.label, warnings=warnings,
    )


def sn_confidence_interval(ts, f, level, table):
    """
    Inverts the scalar SN test into a confidence interval.

    Args:
        ts: TimeSeries
        f: Functional with p = 1
        level: Confidence level in (0, 1)
        table: CriticalValueTable of the SN limit with p = 1

    Returns:
        ConfidenceInterval: theta_hat -/+ sqrt(q_level * V_n / n)
    """
    if not 0.0 < level < 1.0:
        raise DomainError(f"confidence level must lie in (0, 1), got {level}")
    if f.output_dim(ts.d) != 1:
        raise DomainError("confidence intervals need a scalar functional")
    table.check_compatible("sn_limit", 1)
    theta_hat, dev, _ = _recursive_deviations(ts, f)
    normalizer = float(_normalizer_from_deviations(dev)[0, 0])
    critical = table.quantile(level)
    half_width = float(np.sqrt(critical * normalizer / ts.n))
    centre = float(theta_hat[0])
    return ConfidenceInterval(centre - half_width, centre + half_width, level, critical, centre, normalizer)
