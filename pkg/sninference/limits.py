"""
Brownian limit functionals and critical-value tables.

Each limit is simulated by evaluating the finite-n statistic of the
corresponding test on the m Gaussian increments of a Brownian path, which
is the Riemann discretization of the limit integral. All functionals
except the multivariate fixed-b limit are ratios of quadratic forms and are
therefore invariant under path -> A path for invertible A.

Every Monte Carlo replication r draws its increments from
``replication_rng(seed, r)``; draws with a singular normalizer are
discarded and replaced by replications R, R + 1, ... in order, so a table
depends only on (functional, p, params, R, m, seed).
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from sninference import __version__
from sninference.changepoint import cp_profile
from sninference.core import DEFAULT_CONDITION_LIMIT, InferenceConfig, quadratic_forms, replication_rng, snap_floor
from sninference.errors import ConfigurationError, DomainError, ResampleSignal, TableBuildError
from sninference.selfnorm import FILE_PREFIX, GRID_PREFIX, RECURSIVE, load_measure, measure_blocks, measure_from_spec

logger = logging.getLogger(__name__)

SN_LIMIT = "sn_limit"
GENERALIZED_SN_LIMIT = "generalized_sn_limit"
CP_LIMIT = "cp_limit"
FIXEDB_LIMIT = "fixedb_limit"
FUNCTIONAL_IDS = (SN_LIMIT, GENERALIZED_SN_LIMIT, CP_LIMIT, FIXEDB_LIMIT)

MIN_TABLE_REPS = 10_000
MAX_DISCARD_RATE = 0.01
BATCH_SIZE = 500
TABLE_FORMAT = "sninference-critical-values"


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """
    A p-dimensional standard Brownian path on the grid t_i = i / m.

    Attributes:
        values: (m + 1) x p matrix, row i = B(i / m), row 0 = 0
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 3:
            raise DomainError("a Brownian path needs an (m + 1) x p matrix with m >= 2")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def m(self):
        return self.values.shape[0] - 1

    @property
    def p(self):
        return self.values.shape[1]

    @property
    def times(self):
        return np.arange(self.m + 1) / self.m

    def increments(self):
        return np.diff(self.values, axis=0)

    def conjugate(self, matrix):
        """The path A B(t)."""
        return BrownianPath(self.values @ np.asarray(matrix, dtype=float).T)


def draw_increments(seed, replication, m, p):
    """Gaussian increments of replication ``replication``: shape (m, p), variance 1/m."""
    return replication_rng(seed, replication).standard_normal((m, p)) / math.sqrt(m)


def simulate_brownian(p, m, seed, replication=0):
    """
    Simulates one Brownian path.

    Args:
        p: Dimension >= 1
        m: Grid size >= 2
        seed: Master seed
        replication: Replication index mixed into the seed

    Returns:
        BrownianPath
    """
    if p < 1 or m < 2:
        raise DomainError(f"Brownian path needs p >= 1 and m >= 2, got p = {p}, m = {m}")
    values = np.zeros((m + 1, p))
    np.cumsum(draw_increments(seed, replication, m, p), axis=0, out=values[1:])
    return BrownianPath(values)


def _with_origin(increments):
    shape = increments.shape[:-2] + (increments.shape[-2] + 1, increments.shape[-1])
    levels = np.zeros(shape)
    np.cumsum(increments, axis=-2, out=levels[..., 1:, :])
    return levels


# Batched kernels: increments of shape (batch, m, p) -> (values, singular)


def sn_kernel(increments, condition_limit=DEFAULT_CONDITION_LIMIT):
    """B(1)' [m^{-1} sum_i (B(i/m) - (i/m) B(1))(...)']^{-1} B(1) per path."""
    levels = np.cumsum(increments, axis=-2)
    m = levels.shape[-2]
    t = np.arange(1, m + 1) / m
    bridge = levels - t[:, None] * levels[..., -1:, :]
    normalizer = np.einsum("...ti,...tj->...ij", bridge, bridge) / m
    values, _, singular = quadratic_forms(levels[..., -1, :], normalizer, condition_limit)
    return values, singular


def generalized_sn_kernel(increments, H, condition_limit=DEFAULT_CONDITION_LIMIT):
    """V(0,1)' W(H)^{-1} V(0,1) with W(H) = sum_i w_i (V(s_i,t_i) - (t_i - s_i) V(0,1))(...)'."""
    levels = _with_origin(increments)
    m = increments.shape[-2]
    blocks = measure_blocks(m, H)
    keep = np.array([block is not None for block in blocks])
    if not keep.any():
        singular = np.ones(increments.shape[:-2], dtype=bool)
        return np.zeros(increments.shape[:-2]), singular
    starts = np.array([block.j - 1 for block in blocks if block is not None])
    ends = np.array([block.k for block in blocks if block is not None])
    fractions = (ends - starts) / m
    total = levels[..., -1:, :]
    contrasts = levels[..., ends, :] - levels[..., starts, :] - fractions[:, None] * total
    normalizer = np.einsum("a,...ai,...aj->...ij", H.w[keep], contrasts, contrasts)
    values, _, singular = quadratic_forms(levels[..., -1, :], normalizer, condition_limit)
    return values, singular


def cp_kernel(increments, ks=None, condition_limit=DEFAULT_CONDITION_LIMIT):
    """sup over k of the change-point quadratic form of the increments."""
    levels = _with_origin(increments)
    m = increments.shape[-2]
    ks = np.arange(1, m) if ks is None else np.asarray(ks, dtype=int)
    forward = levels[..., 1:, :]
    backward = levels[..., -1:, :] - levels[..., :-1, :]
    _, values, singular = cp_profile(forward, backward, ks, condition_limit)
    scores = np.where(singular, -np.inf, values)
    all_singular = singular.all(axis=-1)
    best = np.where(all_singular, 0.0, scores.max(axis=-1))
    return best, all_singular


def fixedb_kernel(increments, l, sigma_half=None):
    """Left-Riemann average of I{||S B(1)|| <= ||S(B(t + b) - B(t) - b B(1))|| / sqrt(b)}, b = l / m."""
    if sigma_half is not None:
        increments = increments @ np.asarray(sigma_half, dtype=float).T
    levels = _with_origin(increments)
    m = increments.shape[-2]
    b = l / m
    total = levels[..., -1, :]
    windows = levels[..., l:m, :] - levels[..., :m - l, :] - b * total[..., None, :]
    rhs = np.linalg.norm(windows, axis=-1) / math.sqrt(b)
    lhs = np.linalg.norm(total, axis=-1)
    values = np.mean(lhs[..., None] <= rhs, axis=-1)
    return values, np.zeros(values.shape, dtype=bool)


def snap_b(b, m):
    """l_b = round(b m), clamped to [1, m - 1]."""
    if not 0.0 < b < 1.0:
        raise DomainError(f"fixed-b limit needs b in (0, 1), got {b}")
    return min(max(snap_floor(b * m + 0.5), 1), m - 1)


def r_grid_breaks(r_grid, m):
    """Snaps fractions r in (0, 1) to distinct grid breaks k = round(r m) in [1, m - 1]."""
    r_grid = np.atleast_1d(np.asarray(r_grid, dtype=float))
    if r_grid.size == 0 or np.any((r_grid <= 0.0) | (r_grid >= 1.0)):
        raise DomainError("r grid must be a non-empty subset of (0, 1)")
    ks = np.clip(np.floor(r_grid * m + 0.5).astype(int), 1, m - 1)
    return np.unique(ks)


def _single(path, kernel, *args):
    values, singular = kernel(path.increments()[None], *args)
    if singular[0]:
        raise ResampleSignal("normalizer of the limit functional is singular on this path")
    return float(values[0])


def limit_sn_statistic(path, condition_limit=DEFAULT_CONDITION_LIMIT):
    """
    The pivotal SN limit B(1)' [integral (B(t) - t B(1))(...)' dt]^{-1} B(1).

    Raises:
        ResampleSignal: The integral matrix is singular on this path
    """
    return _single(path, sn_kernel, condition_limit)


def limit_generalized_sn(path, H, condition_limit=DEFAULT_CONDITION_LIMIT):
    """
    The generalized SN limit with H snapped to the path grid.

    Raises:
        ResampleSignal: W(H) is singular on this path
    """
    return _single(path, generalized_sn_kernel, H, condition_limit)


def limit_cp_statistic(path, r_grid=None, condition_limit=DEFAULT_CONDITION_LIMIT):
    """
    The change-point limit sup_r (V(0,r) - r V(0,1))' W_r^{-1} (...).

    Args:
        path: BrownianPath
        r_grid: Fractions in (0, 1); defaults to every interior grid point
        condition_limit: Largest acceptable condition number

    Raises:
        ResampleSignal: W_r is singular at every r
    """
    ks = None if r_grid is None else r_grid_breaks(r_grid, path.m)
    return _single(path, cp_kernel, ks, condition_limit)


def limit_fixedb_G(path, b, sigma_half=None):
    """
    The fixed-b limit G(b) on one path.

    Args:
        path: BrownianPath
        b: Subsample fraction in (0, 1), snapped to l_b / m
        sigma_half: Optional p x p matrix Sigma^{1/2}; identity when omitted

    Returns:
        float: Value in [0, 1]
    """
    return _single(path, fixedb_kernel, snap_b(b, path.m), sigma_half)


# Table specification


def _slug(value):
    return str(value).replace(":", "-").replace("/", "-")


@dataclass(frozen=True)
class TableSpec:
    """
    Identity of a critical-value table.

    Attributes:
        functional_id: One of FUNCTIONAL_IDS
        p: Parameter dimension
        params: Sorted (key, value) pairs: ``b`` for the fixed-b limit (and
            ``sigma_half`` when p > 1), ``H`` for the generalized SN limit
    """

    functional_id: str
    p: int
    params: tuple = ()

    @classmethod
    def create(cls, functional_id, p, params=None):
        """Validates and normalizes a table specification."""
        if functional_id not in FUNCTIONAL_IDS:
            raise ConfigurationError(f"unknown limit functional {functional_id!r}; use one of {', '.join(FUNCTIONAL_IDS)}")
        if int(p) != p or p < 1:
            raise ConfigurationError(f"dimension p must be a positive integer, got {p}")
        params = dict(params or {})
        normalized = {}
        if functional_id == FIXEDB_LIMIT:
            if "b" not in params:
                raise ConfigurationError("fixed-b table needs the parameter b")
            normalized["b"] = float(params["b"])
            if not 0.0 < normalized["b"] < 1.0:
                raise ConfigurationError(f"fixed-b table needs b in (0, 1), got {normalized['b']}")
            sigma = params.get("sigma_half")
            if sigma is None and p > 1:
                raise ConfigurationError("fixed-b limit is not pivotal for p > 1; supply sigma_half")
            if sigma is not None:
                sigma = np.asarray(sigma, dtype=float)
                if sigma.shape != (p, p):
                    raise ConfigurationError(f"sigma_half must be {p} x {p}")
                normalized["sigma_half"] = tuple(tuple(row) for row in sigma.tolist())
        elif functional_id == GENERALIZED_SN_LIMIT:
            normalized["H"] = str(params.get("H", RECURSIVE))
        unknown = set(params) - set(normalized)
        if unknown:
            raise ConfigurationError(f"parameters {sorted(unknown)} do not apply to {functional_id}")
        return cls(functional_id, int(p), tuple(sorted(normalized.items())))

    @property
    def param_dict(self):
        return dict(self.params)

    @property
    def name(self):
        """Canonical file stem, e.g. ``fixedb_limit_p1_b0.1``."""
        parts = [self.functional_id, f"p{self.p}"]
        for key, value in self.params:
            if key == "sigma_half":
                digest = hashlib.sha256(json.dumps(value).encode()).hexdigest()[:12]
                parts.append(f"S{digest}")
            elif key == "b":
                parts.append(f"b{value:g}")
            else:
                parts.append(f"{key}-{_slug(value)}")
        return "_".join(parts)

    def document_params(self):
        return {key: [list(row) for row in value] if key == "sigma_half" else value for key, value in self.params}


def _same_param(expected, stored):
    if isinstance(expected, (int, float)) and isinstance(stored, (int, float)):
        return math.isclose(expected, stored, rel_tol=0.0, abs_tol=1e-12)
    if isinstance(expected, (list, tuple, np.ndarray)):
        return np.allclose(np.asarray(expected, dtype=float), np.asarray(stored, dtype=float), rtol=0.0, atol=1e-12)
    return expected == stored


@dataclass(frozen=True)
class CriticalValueTable:
    """
    Monte Carlo quantiles of a limit functional with their provenance.

    Attributes:
        spec: TableSpec
        levels: Increasing quantile levels in (0, 1)
        values: Quantiles, nondecreasing in level
        reps: Accepted replications R
        grid: Brownian grid size m
        seed: Master seed
        discarded: Singular draws that were replaced
        version: Package version that built the table
    """

    spec: TableSpec
    levels: tuple
    values: tuple
    reps: int
    grid: int
    seed: int
    discarded: int = 0
    version: str = __version__

    def __post_init__(self):
        if len(self.levels) != len(self.values) or not self.levels:
            raise ConfigurationError("table needs one value per level")
        if np.any(np.diff(self.levels) <= 0.0) or self.levels[0] <= 0.0 or self.levels[-1] >= 1.0:
            raise ConfigurationError("table levels must increase within (0, 1)")
        if np.any(np.diff(self.values) < 0.0):
            raise ConfigurationError("table quantiles must be nondecreasing in level")
        if self.reps < 1 or self.grid < 2:
            raise ConfigurationError("table metadata is incomplete")

    @property
    def name(self):
        return self.spec.name

    def quantile(self, level):
        """Quantile at ``level``, linearly interpolated between stored levels."""
        if not self.levels[0] <= level <= self.levels[-1]:
            raise DomainError(f"level {level} outside the stored range [{self.levels[0]}, {self.levels[-1]}]")
        return float(np.interp(level, self.levels, self.values))

    def cdf(self, x):
        """P(Z <= x), interpolated and clamped to the stored level range."""
        values = np.asarray(self.values)[::-1]
        levels = np.asarray(self.levels)[::-1]
        unique, first = np.unique(values, return_index=True)
        return float(np.interp(x, unique, levels[first], left=self.levels[0], right=self.levels[-1]))

    def upper_tail(self, x):
        """P(Z > x), the p-value of an observed statistic x."""
        return 1.0 - self.cdf(x)

    def check_compatible(self, functional_id, p, params=None):
        """
        Refuses a table built for another functional, dimension or parameter.

        Raises:
            ConfigurationError: The table does not match
        """
        if self.spec.functional_id != functional_id or self.spec.p != p:
            raise ConfigurationError(
                f"table {self.name} is for {self.spec.functional_id} with p = {self.spec.p}, "
                f"not {functional_id} with p = {p}"
            )
        stored = self.spec.param_dict
        for key, value in (params or {}).items():
            if key not in stored or not _same_param(value, stored[key]):
                raise ConfigurationError(f"table {self.name} has {key} = {stored.get(key)!r}, expected {value!r}")

    def to_document(self):
        return {
            "format": TABLE_FORMAT,
            "functional_id": self.spec.functional_id,
            "p": self.spec.p,
            "params": self.spec.document_params(),
            "levels": list(self.levels),
            "values": list(self.values),
            "reps": self.reps,
            "grid": self.grid,
            "seed": self.seed,
            "discarded": self.discarded,
            "version": self.version,
        }

    @classmethod
    def from_document(cls, document):
        """Rebuilds a table from its JSON document; fails on missing metadata."""
        try:
            if document["format"] != TABLE_FORMAT:
                raise ConfigurationError(f"not a critical-value table (format {document['format']!r})")
            spec = TableSpec.create(document["functional_id"], document["p"], document["params"])
            return cls(
                spec=spec,
                levels=tuple(float(level) for level in document["levels"]),
                values=tuple(float(value) for value in document["values"]),
                reps=int(document["reps"]),
                grid=int(document["grid"]),
                seed=int(document["seed"]),
                discarded=int(document["discarded"]),
                version=str(document["version"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"table document is incomplete: {exc}") from exc


# Simulation


def _evaluator(spec, grid, condition_limit, measure=None):
    params = spec.param_dict
    if spec.functional_id == SN_LIMIT:
        return lambda increments: sn_kernel(increments, condition_limit)
    if spec.functional_id == GENERALIZED_SN_LIMIT:
        if measure is None and params["H"].startswith(FILE_PREFIX):
            raise ConfigurationError(f"measure {params['H']} must be supplied from its atom file")
        H = measure if measure is not None else measure_from_spec(params["H"], grid)
        return lambda increments: generalized_sn_kernel(increments, H, condition_limit)
    if spec.functional_id == CP_LIMIT:
        return lambda increments: cp_kernel(increments, None, condition_limit)
    l = snap_b(params["b"], grid)
    sigma = params.get("sigma_half")
    return lambda increments: fixedb_kernel(increments, l, sigma)


@dataclass(frozen=True, eq=False)
class LimitSample:
    """Monte Carlo draws of a limit functional."""

    spec: TableSpec
    values: np.ndarray = field(repr=False)
    grid: int = 0
    seed: int = 0
    discarded: int = 0

    def quantiles(self, levels):
        return np.quantile(self.values, levels, method="inverted_cdf")


def simulate_limit(spec, reps, grid, seed, condition_limit=DEFAULT_CONDITION_LIMIT, batch_size=BATCH_SIZE, measure=None):
    """
    Draws R accepted values of a limit functional.

    Args:
        spec: TableSpec
        reps: Number of accepted draws R
        grid: Brownian grid size m
        seed: Master seed
        condition_limit: Largest acceptable condition number
        batch_size: Replications evaluated per vectorized batch
        measure: DeltaMeasure for a file-based H (recursive and grid H are
            rebuilt on the m-lattice from the TableSpec)

    Returns:
        LimitSample

    Raises:
        TableBuildError: More than 1% of the draws were singular
    """
    if reps < 1 or grid < 2:
        raise ConfigurationError(f"need reps >= 1 and grid >= 2, got {reps} and {grid}")
    evaluate = _evaluator(spec, grid, condition_limit, measure)
    limit = MAX_DISCARD_RATE * reps
    accepted = np.empty(reps)
    filled = discarded = replication = 0
    while filled < reps:
        size = min(batch_size, reps - filled + int(limit) + 1)
        increments = np.stack([draw_increments(seed, r, grid, spec.p) for r in range(replication, replication + size)])
        replication += size
        values, singular = evaluate(increments)
        for value, bad in zip(values, singular):
            if filled == reps:
                break
            if bad:
                discarded += 1
                if discarded > limit:
                    raise TableBuildError(
                        f"{discarded} of {reps} draws of {spec.name} were singular (over 1%); use a finer grid than m = {grid}"
                    )
                continue
            accepted[filled] = value
            filled += 1
        logger.debug("%s: %d of %d draws accepted", spec.name, filled, reps)
    if discarded:
        logger.warning("%s: discarded %d singular draws", spec.name, discarded)
    return LimitSample(spec, accepted, grid, seed, discarded)


def measure_param(text):
    """
    Table key of an H description.

    ``recursive`` and ``grid:K`` are rebuilt on every lattice and keep their
    text; an atom file is loaded once and keyed by its content digest.

    Returns:
        tuple: (label, DeltaMeasure or None)
    """
    text = str(text)
    if text == RECURSIVE or text.startswith(GRID_PREFIX) or text.startswith(FILE_PREFIX):
        return text, None
    measure = load_measure(text)
    return measure.label, measure


def build_table(functional_id, p, params=None, levels=None, reps=None, grid=None, seed=None, config=None):
    """
    Builds a critical-value table by Monte Carlo.

    Args:
        functional_id: One of FUNCTIONAL_IDS
        p: Parameter dimension
        params: ``{"b": ...}`` or ``{"H": ...}`` as the functional requires
        levels: Quantile levels; defaults to the config's
        reps: Replications R >= 10^4; defaults to the config's
        grid: Brownian grid size m; defaults to the config's
        seed: Master seed; defaults to the config's
        config: Optional InferenceConfig supplying the defaults

    Returns:
        CriticalValueTable: Deterministic in (functional, p, params, R, m, seed)
    """
    config = config or InferenceConfig()
    params = dict(params or {})
    measure = None
    if functional_id == GENERALIZED_SN_LIMIT and "H" in params:
        params["H"], measure = measure_param(params["H"])
    spec = TableSpec.create(functional_id, p, params)
    levels = tuple(sorted(set(float(level) for level in (levels or config.levels))))
    if any(not 0.0 < level < 1.0 for level in levels):
        raise DomainError("quantile levels must lie in (0, 1)")
    reps = config.reps if reps is None else int(reps)
    grid = config.grid if grid is None else int(grid)
    seed = config.rng_seed if seed is None else int(seed)
    if reps < MIN_TABLE_REPS:
        raise ConfigurationError(f"a table needs at least {MIN_TABLE_REPS} replications, got {reps}")

    logger.info("building %s with R = %d, m = %d, seed = %d", spec.name, reps, grid, seed)
    sample = simulate_limit(spec, reps, grid, seed, config.condition_limit, measure=measure)
    values = tuple(float(value) for value in sample.quantiles(levels))
    return CriticalValueTable(spec, levels, values, reps, grid, seed, sample.discarded)
