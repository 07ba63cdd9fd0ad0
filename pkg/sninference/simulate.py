"""
Synthetic series generators.

Used by the tests, the calibration checks and the divergence demo. Every
generator takes a ``numpy.random.Generator`` so callers control seeding.
"""

import numpy as np
from scipy import signal

from sninference.core import TimeSeries
from sninference.errors import DomainError


def iid_normal(n, rng, d=1):
    """n iid N(0, I_d) observations."""
    if n < 1 or d < 1:
        raise DomainError("need n >= 1 and d >= 1")
    return TimeSeries(rng.standard_normal((n, d)))


def ar1(n, phi, rng, burn_in=200):
    """
    Stationary AR(1) X_t = phi X_{t-1} + e_t with N(0, 1) innovations.

    Args:
        n: Length
        phi: Coefficient, |phi| < 1
        rng: numpy Generator
        burn_in: Discarded start-up observations

    Returns:
        TimeSeries
    """
    if not -1.0 < phi < 1.0:
        raise DomainError(f"AR(1) needs |phi| < 1, got {phi}")
    if n < 1:
        raise DomainError("need n >= 1")
    noise = rng.standard_normal(n + burn_in)
    path = signal.lfilter([1.0], [1.0, -phi], noise)
    return TimeSeries(path[burn_in:])


def mean_shift(n, delta, k_star, rng, phi=0.0):
    """
    AR(1) noise (iid when phi = 0) with the mean raised by ``delta`` after
    observation ``k_star``.
    """
    if not 0 <= k_star <= n:
        raise DomainError(f"break k* = {k_star} must lie in [0, {n}]")
    base = ar1(n, phi, rng) if phi else iid_normal(n, rng)
    values = base.values.copy()
    values[k_star:] += delta
    return TimeSeries(values)


def planted_count(n):
    """Number of indices j >= 1 with j < n^{1/3}, counted exactly."""
    count = 0
    while (count + 1) ** 3 < n:
        count += 1
    return count


def planted_outliers(n, rng):
    """
    X_j = n for 1 <= j < n^{1/3}, the remaining observations iid U[0, 1].
    """
    if n < 1:
        raise DomainError("need n >= 1")
    values = rng.uniform(size=n)
    values[:planted_count(n)] = float(n)
    return TimeSeries(values)
