# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
"""
Numerical building blocks shared by the equilibrium, recovery and
identification code: quantile grids, graded quadrature, monotone inversion
and smoothed empirical distributions.
"""
import functools
import logging

import numpy as np
from scipy.interpolate import PchipInterpolator

from .common import ValidationError, WinbidException

log = logging.getLogger(__name__)

DEFAULT_GRID_SIZE = 1001
MIN_GRID_SIZE = 200
EMPIRICAL_POINTS = 512


class TailError(WinbidException):
    """
    Raised when a tail exponent cannot be fitted.
    """


def chebyshev_grid(size=DEFAULT_GRID_SIZE):
    """
    Return a quantile grid on [0, 1] clustered at both ends.

    :param size: Number of nodes, endpoints included
    :type size: int

    :return: Increasing grid with ``grid[0] == 0`` and ``grid[-1] == 1``
    :rtype: ``numpy.ndarray``
    """
    if size < 2:
        raise ValidationError(f"grid size must be at least 2, got {size}")
    grid = 0.5 * (1.0 - np.cos(np.pi * np.arange(size) / (size - 1)))
    grid[0] = 0.0
    grid[-1] = 1.0
    return grid


def check_grid(grid):
    """
    Validate a user supplied quantile grid.

    :raises ValidationError: If the grid is too small, unsorted or does not
        span [0, 1]
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < MIN_GRID_SIZE:
        raise ValidationError(
            f"grid needs at least {MIN_GRID_SIZE} points, got {grid.size}"
        )
    if grid[0] != 0.0 or grid[-1] != 1.0:
        raise ValidationError("grid must include both endpoints 0 and 1")
    if np.any(np.diff(grid) <= 0):
        raise ValidationError("grid must be strictly increasing")
    return grid


@functools.lru_cache(maxsize=None)
def gauss_legendre(order):
    """
    Gauss-Legendre nodes and weights on [0, 1].
    """
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return 0.5 * (nodes + 1.0), 0.5 * weights


@functools.lru_cache(maxsize=None)
def graded_rule(levels=41, order=10):
    """
    Composite Gauss-Legendre rule on [0, 1] with panels halving towards 0.

    Panels are ``[2**-(j+1), 2**-j]`` for ``j < levels`` plus ``[0, 2**-levels]``,
    which keeps relative accuracy for integrands with a power singularity
    at the origin.

    :return: Nodes and weights
    :rtype: tuple(``numpy.ndarray``, ``numpy.ndarray``)
    """
    base_nodes, base_weights = gauss_legendre(order)
    edges = np.concatenate([[0.0], 2.0 ** -np.arange(levels, -1, -1)])
    width = np.diff(edges)
    nodes = (edges[:-1, None] + width[:, None] * base_nodes[None, :]).ravel()
    weights = (width[:, None] * base_weights[None, :]).ravel()
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return nodes, weights


def derivative(x, y):
    """
    Three point local quadratic derivative on a nonuniform grid.

    Central differences in the interior and second order one-sided
    differences at both ends.
    """
    return np.gradient(np.asarray(y, dtype=float), np.asarray(x, dtype=float), edge_order=2)


def invert_increasing(func, targets, x_table, y_table, slope=None, tol=1e-15, max_iter=80):
    """
    Solve ``func(x) = target`` for an increasing ``func``.

    The table brackets each target; bracketed Newton steps refine the
    bracket, falling back to bisection whenever a step leaves it.

    :param func: Vectorized increasing function
    :type func: callable
    :param targets: Values to invert
    :type targets: array_like
    :param x_table: Increasing abscissae
    :type x_table: ``numpy.ndarray``
    :param y_table: ``func(x_table)``
    :type y_table: ``numpy.ndarray``
    :param slope: Optional derivative of ``func``, called as ``slope(x, func(x))``
    :type slope: callable

    :return: Solutions clipped to ``[x_table[0], x_table[-1]]``
    :rtype: ``numpy.ndarray``
    """
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    result = np.empty_like(targets)
    below = targets <= y_table[0]
    above = targets >= y_table[-1]
    result[below] = x_table[0]
    result[above] = x_table[-1]
    inside = ~(below | above)
    if not inside.any():
        return result

    goal = targets[inside]
    idx = np.clip(np.searchsorted(y_table, goal, side="right"), 1, x_table.size - 1)
    lo = x_table[idx - 1].copy()
    hi = x_table[idx].copy()
    span = y_table[idx] - y_table[idx - 1]
    frac = np.where(span > 0, (goal - y_table[idx - 1]) / np.where(span > 0, span, 1.0), 0.5)
    x = lo + frac * (hi - lo)
    for _ in range(max_iter):
        level = func(x)
        value = level - goal
        hi = np.where(value > 0, x, hi)
        lo = np.where(value <= 0, x, lo)
        if slope is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                step = x - value / slope(x, level)
            ok = np.isfinite(step) & (step >= lo) & (step <= hi)
            new = np.where(ok, step, 0.5 * (lo + hi))
        else:
            new = 0.5 * (lo + hi)
        done = np.max(np.abs(new - x)) <= tol * max(1.0, np.max(np.abs(x)))
        x = new
        if done or np.max(hi - lo) <= tol:
            break
    result[inside] = x
    return result


def fit_power_exponent(offsets, values):
    """
    Least squares slope of ``log(values)`` against ``log(offsets)``.

    :raises TailError: If fewer than three offsets carry positive mass
    """
    offsets = np.asarray(offsets, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = (offsets > 0) & (values > 0) & np.isfinite(values)
    if keep.sum() < 3:
        raise TailError(
            f"tail fit needs at least 3 offsets with positive mass, got {int(keep.sum())}"
        )
    slope, _ = np.polyfit(np.log(offsets[keep]), np.log(values[keep]), 1)
    return float(slope)


class EmpiricalDistribution:
    """
    Smoothed distribution of a univariate sample.

    The empirical quantile function is tabulated on ``points`` equally spaced
    levels and interpolated by a monotone cubic. The cdf is its inverse and
    the density is ``1 / W'(G(b))``.

    :param sample: Observations
    :type sample: array_like
    :param points: Number of quantile levels
    :type points: int
    """

    def __init__(self, sample, points=EMPIRICAL_POINTS):
        sample = np.sort(np.asarray(sample, dtype=float))
        if sample.size < 2:
            raise ValidationError("an empirical distribution needs at least 2 observations")
        self.sample = sample
        self.levels = np.linspace(0.0, 1.0, points)
        quantiles = np.maximum.accumulate(np.quantile(sample, self.levels))
        self.quantile = PchipInterpolator(self.levels, quantiles, extrapolate=False)
        self.quantile_slope = self.quantile.derivative()
        fine = np.linspace(0.0, 1.0, 32 * points + 1)
        self._fine_levels = fine
        self._fine_values = np.maximum.accumulate(self.quantile(fine))

    @property
    def lower(self):
        return float(self.sample[0])

    @property
    def upper(self):
        return float(self.sample[-1])

    def cdf(self, b):
        b = np.asarray(b, dtype=float)
        return np.interp(b, self._fine_values, self._fine_levels, left=0.0, right=1.0)

    def pdf(self, b):
        b = np.asarray(b, dtype=float)
        level = self.cdf(b)
        slope = self.quantile_slope(np.clip(level, 0.0, 1.0))
        with np.errstate(divide="ignore"):
            density = np.where(slope > 0, 1.0 / slope, 0.0)
        inside = (b >= self.lower) & (b <= self.upper)
        return np.where(inside, density, 0.0)
