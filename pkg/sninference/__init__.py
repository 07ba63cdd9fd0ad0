"""
Self-normalized inference for stationary time series.

Subsample estimator grids, self-normalized (SN) statistics over measures on
the triangle of subsample fractions, SN change-point tests, fixed-b
subsampling p-values, multiplier bootstrap, and Monte Carlo critical-value
tables for the Brownian limits of all of them.
"""

__version__ = "0.3.0"
