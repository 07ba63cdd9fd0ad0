"""
Multiplier bootstrap.

Each replicate multiplies the summands by mean-one multipliers M_1, ..., M_n
that are independent of the data, recomputes the subsample estimates and
feeds the deviations theta_hat^b - theta_hat into the chosen statistic:

    sn      SN statistic of the recursive deviations
    cp      change-point scan of the forward and backward deviations
    fixedb  1 - p_hat^B(b), the bootstrap fixed-b p-value turned into an
            upper-tail statistic

Quantile and autocorrelation replicates clamp the multipliers at zero; their
validity is assumed by analogy with the indicator class, not derived.

Replicate r uses ``replication_rng(seed, r)``, so results do not depend on
evaluation order.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from sninference.changepoint import cp_profile, scan_range
from sninference.core import InferenceConfig, quadratic_forms, replication_rng
from sninference.errors import BootstrapUnstableError, DomainError, EstimatorUndefinedError, SingularityError
from sninference.estimators import block_estimate, deviations, recursive_estimates, reverse_recursive_estimates
from sninference.fixedb import block_length, fixedb_pvalue, window_estimates

logger = logging.getLogger(__name__)

GAUSSIAN = "iid_gaussian"
RADEMACHER = "iid_rademacher"
BLOCK = "block_dependent"

SN = "sn"
CP = "cp"
FIXEDB = "fixedb"
KINDS = (SN, CP, FIXEDB)

MIN_REPLICATES = 100
MAX_FAILURE_RATE = 0.05


@dataclass(frozen=True)
class MultiplierScheme:
    """
    Distribution of the bootstrap multipliers.

    Attributes:
        kind: iid_gaussian (1 + N(0, 1)), iid_rademacher (1 +/- 1) or
            block_dependent (1 + moving average of length block_length)
        seed: Master seed
        block_length: Dependence range l_b; None means ceil(n^{1/3})
    """

    kind: str
    seed: int
    block_length: int = None

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, RADEMACHER, BLOCK):
            raise DomainError(f"unknown multiplier scheme {self.kind!r}")
        if self.block_length is not None and (self.kind != BLOCK or self.block_length < 1):
            raise DomainError("block length applies to block_dependent multipliers and must be >= 1")

    @classmethod
    def parse(cls, text, seed):
        """Reads ``gaussian``, ``rademacher``, ``block`` or ``block:L``."""
        name, _, arg = text.partition(":")
        if name == "gaussian" and not arg:
            return cls(GAUSSIAN, seed)
        if name == "rademacher" and not arg:
            return cls(RADEMACHER, seed)
        if name == "block":
            try:
                return cls(BLOCK, seed, int(arg) if arg else None)
            except ValueError as exc:
                raise DomainError(f"cannot parse multipliers {text!r}; use block:L") from exc
        raise DomainError(f"unknown multipliers {text!r}; use gaussian, rademacher or block:L")

    def resolved_block_length(self, n):
        return self.block_length or math.ceil(n ** (1.0 / 3.0))

    def describe(self):
        if self.kind == GAUSSIAN:
            return "gaussian"
        if self.kind == RADEMACHER:
            return "rademacher"
        return f"block:{self.block_length}" if self.block_length else "block"


def generate_multipliers(scheme, n, replication=0):
    """
    Draws M_1, ..., M_n for one replicate.

    Block-dependent multipliers are 1 + (e_i + ... + e_{i+l-1}) / sqrt(l)
    with iid standard normal e, so they have unit variance and are
    uncorrelated at lags of l or more.

    Args:
        scheme: MultiplierScheme
        n: Number of multipliers
        replication: Replicate index

    Returns:
        ndarray: Length-n vector with mean one
    """
    if n < 1:
        raise DomainError("need at least one multiplier")
    rng = replication_rng(scheme.seed, replication)
    if scheme.kind == GAUSSIAN:
        return 1.0 + rng.standard_normal(n)
    if scheme.kind == RADEMACHER:
        return 2.0 * rng.integers(0, 2, size=n).astype(float)
    l = scheme.resolved_block_length(n)
    noise = rng.standard_normal(n + l - 1)
    sums = np.concatenate(([0.0], np.cumsum(noise)))
    return 1.0 + (sums[l:] - sums[:-l]) / math.sqrt(l)


def bootstrap_estimate(ts, f, idx, multipliers):
    """
    The bootstrap estimate on the block X_j, ..., X_k.

    Mean-type: sum M_i X_i / (k - j + 1). Quantile and autocorrelation use
    the weights clamped at zero.

    Raises:
        EstimatorUndefinedError: The block has zero total weight
    """
    idx.validate(ts.n)
    multipliers = np.asarray(multipliers, dtype=float)
    if multipliers.shape != (ts.n,):
        raise DomainError(f"need {ts.n} multipliers, got {multipliers.size}")
    return block_estimate(ts.block(idx.j, idx.k), f, multipliers[idx.j - 1:idx.k])


def bootstrap_pvalue(observed, replicates):
    """Add-one p-value (1 + #{replicate >= observed}) / (B + 1)."""
    replicates = np.asarray(replicates, dtype=float)
    if replicates.size < 1:
        raise DomainError("bootstrap p-value needs at least one replicate")
    return (1 + int(np.count_nonzero(replicates >= observed))) / (replicates.size + 1)


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    """
    Bootstrap distribution of a statistic.

    Attributes:
        kind: sn, cp or fixedb
        observed: Statistic on the data
        replicates: Successful replicate values
        pvalue: Add-one bootstrap p-value
        requested: Replicates requested (B)
        failed: Replicates that were degenerate and dropped
        scheme: MultiplierScheme used
    """

    kind: str
    observed: float
    replicates: np.ndarray = field(repr=False)
    pvalue: float = 1.0
    requested: int = 0
    failed: int = 0
    scheme: MultiplierScheme = None

    def quantile(self, level):
        return float(np.quantile(self.replicates, level, method="inverted_cdf"))


def _sn_value(path, vector, mask, condition_limit):
    n = path.shape[0]
    centred = deviations(path, path[-1])
    centred[mask] = 0.0
    scaled = np.arange(1, n + 1, dtype=float)[:, None] * centred
    normalizer = scaled.T @ scaled / n ** 2
    normalizer = 0.5 * (normalizer + normalizer.T)
    values, _, singular = quadratic_forms(vector[None], normalizer[None], condition_limit)
    return None if singular[0] else n * float(values[0])


def _cp_value(forward, backward, ks, condition_limit):
    n = forward.shape[0]
    t = np.arange(1, n + 1, dtype=float)[:, None]
    _, values, singular = cp_profile(t * forward, (n - t + 1.0) * backward, ks, condition_limit)
    if singular.all():
        return None
    return float(np.max(np.where(singular, -np.inf, values)))


class _Replicator:
    """Computes observed and replicate statistics of one kind."""

    def __init__(self, ts, f, kind, theta0, b, config):
        self.ts, self.f, self.kind, self.config = ts, f, kind, config
        limit = config.condition_limit
        if kind == SN:
            theta, undefined = recursive_estimates(ts, f, return_mask=True)
            if undefined[-1]:
                raise EstimatorUndefinedError("full-sample estimate is undefined")
            self.theta, self.undefined = theta, undefined
            observed = _sn_value(theta, theta[-1] - theta0, undefined, limit)
            if observed is None:
                raise SingularityError("SN normalizer V_n of the data is singular; nothing to bootstrap")
            self.observed = observed
        elif kind == CP:
            self.theta, self.undefined = recursive_estimates(ts, f, return_mask=True)
            self.rho, self.undefined_back = reverse_recursive_estimates(ts, f, return_mask=True)
            self.ks = scan_range(ts.n)
            centre = self.theta[-1]
            observed = _cp_value(
                self._masked(deviations(self.theta, centre), self.undefined),
                self._masked(deviations(self.rho, centre), self.undefined_back),
                self.ks, limit,
            )
            if observed is None:
                raise SingularityError("change-point normalizer is singular at every break; nothing to bootstrap")
            self.observed = observed
        else:
            result = fixedb_pvalue(ts, f, theta0, b)
            self.l = result.l
            self.theta_hat = result.theta_hat
            self.windows = window_estimates(ts, f, self.l)
            self.observed = 1.0 - result.pvalue

    @staticmethod
    def _masked(values, mask):
        values = values.copy()
        values[mask] = 0.0
        return values

    def replicate(self, weights):
        """One replicate statistic, or None when degenerate."""
        limit = self.config.condition_limit
        if self.kind == SN:
            theta_b, undefined = recursive_estimates(self.ts, self.f, return_mask=True, weights=weights)
            if undefined[-1]:
                return None
            path = deviations(theta_b, self.theta)
            return _sn_value(path, path[-1], undefined | self.undefined, limit)
        if self.kind == CP:
            theta_b, undefined = recursive_estimates(self.ts, self.f, return_mask=True, weights=weights)
            rho_b, undefined_back = reverse_recursive_estimates(self.ts, self.f, return_mask=True, weights=weights)
            if undefined[-1]:
                return None
            forward = self._masked(deviations(theta_b, self.theta), undefined | self.undefined)
            backward = self._masked(deviations(rho_b, self.rho), undefined_back | self.undefined_back)
            return _cp_value(forward, backward, self.ks, limit)

        n = self.ts.n
        full = block_estimate(self.ts.values, self.f, weights)
        windows = window_estimates(self.ts, self.f, self.l, weights)
        statistic = math.sqrt(n) * np.linalg.norm(full - self.theta_hat)
        norms = math.sqrt(self.l) * np.linalg.norm(deviations(windows, full), axis=1)
        return 1.0 - float(np.mean(statistic <= norms))


def bootstrap_distribution(ts, f, kind, scheme, replicates=None, theta0=None, b=None, config=None):
    """
    Bootstraps the sn, cp or fixedb statistic.

    Args:
        ts: TimeSeries
        f: Functional
        kind: ``sn`` (needs theta0), ``cp`` or ``fixedb`` (needs theta0 and b)
        scheme: MultiplierScheme
        replicates: Number of replicates B >= 100; defaults to the config's
        theta0: Hypothesized parameter
        b: Subsample fraction for the fixedb kind
        config: Optional InferenceConfig

    Returns:
        BootstrapResult

    Raises:
        BootstrapUnstableError: More than 5% of the replicates were degenerate
        SingularityError: The sn or cp normalizer of the data itself is singular
    """
    config = config or InferenceConfig()
    replicates = config.bootstrap_replicates if replicates is None else int(replicates)
    if kind not in KINDS:
        raise DomainError(f"unknown bootstrap statistic {kind!r}; use one of {', '.join(KINDS)}")
    if replicates < MIN_REPLICATES:
        raise DomainError(f"bootstrap needs B >= {MIN_REPLICATES}, got {replicates}")
    if kind in (SN, FIXEDB) and theta0 is None:
        raise DomainError(f"the {kind} bootstrap needs theta0")
    if kind == FIXEDB:
        if b is None:
            raise DomainError("the fixedb bootstrap needs b")
        block_length(b, ts.n)
    if theta0 is not None:
        theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
        if theta0.size != f.output_dim(ts.d):
            raise DomainError(f"theta0 must have {f.output_dim(ts.d)} components, got {theta0.size}")

    replicator = _Replicator(ts, f, kind, theta0, b, config)
    values, failed = [], 0
    for r in range(replicates):
        weights = generate_multipliers(scheme, ts.n, r)
        try:
            value = replicator.replicate(weights)
        except EstimatorUndefinedError:
            value = None
        if value is None:
            failed += 1
        else:
            values.append(value)

    if failed > MAX_FAILURE_RATE * replicates:
        raise BootstrapUnstableError(f"{failed} of {replicates} bootstrap replicates were degenerate")
    if failed:
        logger.warning("dropped %d degenerate bootstrap replicates", failed)
    values = np.array(values)
    return BootstrapResult(
        kind=kind,
        observed=replicator.observed,
        replicates=values,
        pvalue=bootstrap_pvalue(replicator.observed, values),
        requested=replicates,
        failed=failed,
        scheme=scheme,
    )


def bootstrap_fixedb_pvalue(ts, f, theta0, b, scheme, replicates=None, config=None):
    """
    Calibrates the fixed-b p-value by the bootstrap p_hat^B(b).

    Returns the share of replicates whose bootstrap p-value is at most the
    observed p_hat_n(b) (add-one convention), which is uniform under the
    null without a pivotal limit.

    Returns:
        BootstrapResult of kind ``fixedb``
    """
    return bootstrap_distribution(ts, f, FIXEDB, scheme, replicates, theta0=theta0, b=b, config=config)
