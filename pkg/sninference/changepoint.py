"""
Self-normalized change-point test.

For each candidate break k the contrast T_n(k) = (k / sqrt(n)) (theta_hat_{1,k} - theta_hat_{1,n})
is studentized by V_n(k), which combines the recursive estimates of the
segment before k (anchored at theta_hat_{1,k}) with the backward recursive
estimates of the segment after k (anchored at theta_hat_{k+1,n}). The test
statistic is the largest quadratic form over the scanned k.

The scan uses running moment sums so all n - 1 normalizers cost O(n p^2).
The same kernel evaluates the Brownian limit on simulated paths.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from sninference.core import InferenceConfig, quadratic_forms
from sninference.errors import DomainError, EstimatorUndefinedError, SingularityError
from sninference.estimators import deviations, recursive_estimates, reverse_recursive_estimates

logger = logging.getLogger(__name__)

# Relative size below which a normalizer half counts as exactly zero
CANCELLATION_TOLERANCE = 256 * np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class CpResult:
    """
    Outcome of the change-point scan.

    Attributes:
        statistic: sup_k T_n(k)' V_n(k)^{-1} T_n(k) over the scanned k
        argmax_k: Smallest scanned k attaining the supremum
        n: Sample size
        per_k: Tuple of (k, T_n(k), quadratic form) for the usable k
        skipped: Scanned k whose normalizer was singular
        clipped: Whether the scan was restricted to [n^{-gamma}, 1 - n^{-gamma}]
        gamma: Clipping exponent (None when not clipped)
    """

    statistic: float
    argmax_k: int
    n: int
    per_k: tuple = field(default=(), repr=False)
    skipped: tuple = ()
    clipped: bool = False
    gamma: float = None

    @property
    def estimated_fraction(self):
        """Estimated break location argmax_k / n."""
        return self.argmax_k / self.n


def _outer(a):
    return a[..., :, None] * a[..., None, :]


def _half(sums_outer, sums_weighted, sums_weight_sq, anchor, anchor_weight):
    """sum_t (u_t - (c_t / c) u)(u_t - (c_t / c) u)' from running sums."""
    cross = sums_weighted[..., :, None] * anchor[..., None, :]
    cross = (cross + np.swapaxes(cross, -1, -2)) / anchor_weight[:, None, None]
    square = (sums_weight_sq / anchor_weight ** 2)[:, None, None] * _outer(anchor)
    half = sums_outer - cross + square

    scale = (
        np.trace(sums_outer, axis1=-2, axis2=-1)
        + 2.0 * np.linalg.norm(sums_weighted, axis=-1) * np.linalg.norm(anchor, axis=-1) / anchor_weight
        + sums_weight_sq / anchor_weight ** 2 * np.sum(anchor ** 2, axis=-1)
    )
    noise = np.linalg.norm(half, axis=(-2, -1)) <= CANCELLATION_TOLERANCE * scale
    return np.where(noise[..., None, None], 0.0, half)


def cp_normalizers(forward, backward):
    """
    n^2 V_n(k) for k = 1..n-1 from scaled recursive paths.

    With any common centre c, ``forward[t-1] = t (theta_hat_{1,t} - c)`` and
    ``backward[t-1] = (n - t + 1)(theta_hat_{t,n} - c)``. Leading axes are
    batch axes.

    Args:
        forward: Array of shape (..., n, p)
        backward: Array of shape (..., n, p)

    Returns:
        ndarray: Shape (..., n - 1, p, p)
    """
    n = forward.shape[-2]
    t = np.arange(1, n + 1, dtype=float)
    k = t[:-1]

    forward_outer = np.cumsum(_outer(forward), axis=-3)[..., :-1, :, :]
    forward_weighted = np.cumsum(t[:, None] * forward, axis=-2)[..., :-1, :]
    forward_weight_sq = np.cumsum(t ** 2)[:-1]
    front = _half(forward_outer, forward_weighted, forward_weight_sq, forward[..., :-1, :], k)

    c = n - t + 1.0
    backward_outer = np.flip(np.cumsum(np.flip(_outer(backward), axis=-3), axis=-3), axis=-3)[..., 1:, :, :]
    backward_weighted = np.flip(np.cumsum(np.flip(c[:, None] * backward, axis=-2), axis=-2), axis=-2)[..., 1:, :]
    backward_weight_sq = np.cumsum((c ** 2)[::-1])[::-1][1:]
    back = _half(backward_outer, backward_weighted, backward_weight_sq, backward[..., 1:, :], c[1:])

    total = front + back
    return 0.5 * (total + np.swapaxes(total, -1, -2))


def cp_profile(forward, backward, ks, condition_limit):
    """
    Quadratic forms T_n(k)' V_n(k)^{-1} T_n(k) at the given k.

    Args:
        forward, backward: Scaled recursive paths as for ``cp_normalizers``
        ks: 1-based candidate breaks in [1, n - 1]
        condition_limit: Largest acceptable condition number

    Returns:
        tuple: (contrasts of shape (..., len(ks), p), values, singular mask)
    """
    n = forward.shape[-2]
    ks = np.asarray(ks, dtype=int)
    normalizers = cp_normalizers(forward, backward)[..., ks - 1, :, :]
    contrast = forward[..., ks - 1, :] - (ks / n)[:, None] * forward[..., -1:, :]
    values, _, singular = quadratic_forms(contrast, normalizers, condition_limit)
    return contrast / np.sqrt(n), n * values, singular


def scan_range(n, gamma=None):
    """Candidate breaks k = 1..n-1, restricted to k/n in [n^{-gamma}, 1 - n^{-gamma}] when clipping."""
    ks = np.arange(1, n)
    if gamma is None:
        return ks
    threshold = n ** (-gamma)
    fractions = ks / n
    return ks[(fractions >= threshold) & (fractions <= 1.0 - threshold)]


def _scaled_paths(ts, f):
    theta, undefined = recursive_estimates(ts, f, return_mask=True)
    rho, undefined_back = reverse_recursive_estimates(ts, f, return_mask=True)
    if undefined[-1]:
        raise EstimatorUndefinedError("full-sample estimate is undefined")
    centre = theta[-1]
    t = np.arange(1, ts.n + 1, dtype=float)[:, None]
    forward = t * deviations(theta, centre)
    backward = (ts.n - t + 1.0) * deviations(rho, centre)
    forward[undefined] = 0.0
    backward[undefined_back] = 0.0
    return forward, backward, undefined, undefined_back


def cp_normalizer(ts, f, k):
    """
    The change-point normalizer V_n(k), computed directly.

    Args:
        ts: TimeSeries
        f: Functional
        k: Candidate break, 1 <= k <= n - 1

    Returns:
        ndarray: Symmetric positive semidefinite p x p matrix
    """
    n = ts.n
    if not 1 <= k <= n - 1:
        raise DomainError(f"break k = {k} must lie in [1, {n - 1}]")
    theta = recursive_estimates(ts, f)
    rho = reverse_recursive_estimates(ts, f)

    t = np.arange(1, k + 1, dtype=float)[:, None]
    front = t * deviations(theta[:k], theta[k - 1])
    t = np.arange(k + 1, n + 1, dtype=float)[:, None]
    back = (n - t + 1.0) * deviations(rho[k:], rho[k])
    matrix = (front.T @ front + back.T @ back) / n ** 2
    return 0.5 * (matrix + matrix.T)


def cp_statistic(ts, f, config=None, clipped=False, gamma=None):
    """
    Runs the SN change-point scan.

    Args:
        ts: TimeSeries with n >= 4
        f: Functional
        config: Optional InferenceConfig
        clipped: Restrict the scan to k/n in [n^{-gamma}, 1 - n^{-gamma}]
        gamma: Clipping exponent; defaults to the config's

    Returns:
        CpResult

    Raises:
        SingularityError: V_n(k) is singular at every scanned k
    """
    config = config or InferenceConfig()
    n = ts.n
    if n < 4:
        raise DomainError(f"change-point test needs n >= 4, got {n}")
    if clipped:
        gamma = config.clip_gamma if gamma is None else gamma
        if not 0.0 < gamma < 0.5:
            raise DomainError(f"gamma must lie in (0, 1/2), got {gamma}")
    else:
        gamma = None

    ks = scan_range(n, gamma)
    if ks.size == 0:
        raise DomainError(f"clipping with gamma = {gamma} leaves no candidate break for n = {n}")
    forward, backward, undefined, undefined_back = _scaled_paths(ts, f)
    usable = ~undefined[ks - 1] & ~undefined_back[ks]
    ks = ks[usable]
    if ks.size == 0:
        raise EstimatorUndefinedError("no candidate break has defined estimates on both sides")

    contrasts, values, singular = cp_profile(forward, backward, ks, config.condition_limit)
    if singular.all():
        raise SingularityError(f"V_n(k) is singular at all {ks.size} scanned breaks")
    skipped = tuple(int(k) for k in ks[singular])
    if skipped:
        logger.warning("skipped %d breaks with singular normalizer", len(skipped))

    scores = np.where(singular, -np.inf, values)
    best = int(np.argmax(scores))
    per_k = tuple(
        (int(k), contrasts[i].copy(), float(values[i]))
        for i, k in enumerate(ks)
        if not singular[i]
    )
    return CpResult(
        statistic=float(values[best]),
        argmax_k=int(ks[best]),
        n=n,
        per_k=per_k,
        skipped=skipped,
        clipped=gamma is not None,
        gamma=gamma,
    )
