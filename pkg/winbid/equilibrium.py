# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
"""
Equilibrium objects of the benchmark first-price auction.

Values are represented by their quantile function ``V`` on [0, 1]. Given
``N = n`` active bidders with CRRA exponent ``theta`` the symmetric
equilibrium bid quantile is

    B_n(a) = k a**-k * int_0^a t**(k - 1) V(t) dt,   k = (n - 1) / theta

and the winning bid has cdf ``G(b) = sum_n p_n G_n(b)**n`` with
``G_n = B_n**-1``. Every object is tabulated on a shared quantile grid
and keeps an exact evaluator for off-grid queries.
"""
import dataclasses
import functools
import logging

import numpy as np
from scipy.interpolate import PchipInterpolator

from .common import KNOWN_N, UNKNOWN_N, ValidationError, WinbidException
from .numeric import (
    check_grid,
    chebyshev_grid,
    derivative,
    fit_power_exponent,
    graded_rule,
    invert_increasing,
    TailError,
)

log = logging.getLogger(__name__)

CHUNK = 2048
DEFAULT_COMPATIBILITY_TOLERANCE = 1e-3
DEFAULT_ALPHA_FLOOR = 0.01


class QuadratureError(WinbidException):
    """
    Raised when a bid integral does not evaluate to a finite number.
    """


class IncompatibleBidError(WinbidException):
    """
    Raised when a bid quantile implies decreasing values.
    """


class DomainError(WinbidException):
    """
    Raised when a closed form is evaluated outside its domain.
    """


def _check_theta(theta):
    if not 0.0 < theta <= 1.0:
        raise ValidationError(f"theta must lie in (0, 1], got {theta}")
    return float(theta)


def _check_bidders(n, name="n"):
    if int(n) != n or n < 2:
        raise ValidationError(f"{name} must be an integer of at least 2, got {n}")
    return int(n)


@dataclasses.dataclass(frozen=True, eq=False)
class ValueQuantile:
    """
    A private value quantile function ``V(alpha) = F**-1(alpha)``.

    Use the ``power``, ``uniform`` and ``from_table`` constructors rather than
    building instances directly.
    """

    func: object
    grid: np.ndarray
    values: np.ndarray
    derivative: object = None
    name: str = "custom"

    def __post_init__(self):
        steps = np.diff(self.values)
        if not np.all(np.isfinite(self.values)):
            raise ValidationError(f"value quantile {self.name} is not finite on the grid")
        if np.any(steps <= 0):
            at = self.grid[int(np.argmax(steps <= 0))]
            raise ValidationError(
                f"value quantile {self.name} is not strictly increasing near alpha={at:.6g}"
            )
        if self.derivative is not None:
            interior = (self.grid >= 0.01) & (self.grid <= 0.99)
            supplied = np.asarray(self.derivative(self.grid[interior]), dtype=float)
            numeric = derivative(self.grid, self.values)[interior]
            if np.any(supplied <= 0):
                raise ValidationError(f"derivative of {self.name} must be positive")
            if np.any(np.abs(supplied - numeric) > 1e-2 * (np.abs(supplied) + 1.0)):
                raise ValidationError(
                    f"derivative of {self.name} disagrees with its finite differences"
                )

    @classmethod
    def from_function(cls, func, derivative=None, grid=None, name="custom"):
        """
        Wrap a vectorized quantile function.

        :param func: Increasing function on [0, 1]
        :type func: callable
        :param derivative: Optional derivative of ``func``
        :type derivative: callable
        """
        grid = chebyshev_grid() if grid is None else check_grid(grid)
        values = np.asarray(func(grid), dtype=float)
        return cls(func, grid, values, derivative, name)

    @classmethod
    def power(cls, exponent=1.0, lo=0.0, hi=1.0, grid=None):
        """
        ``V(alpha) = lo + (hi - lo) * alpha**exponent``.
        """
        if exponent <= 0 or hi <= lo:
            raise ValidationError(
                f"power values need exponent > 0 and hi > lo, got {exponent}, [{lo}, {hi}]"
            )
        width = hi - lo

        def func(alpha):
            return lo + width * np.power(np.asarray(alpha, dtype=float), exponent)

        def slope(alpha):
            alpha = np.asarray(alpha, dtype=float)
            with np.errstate(divide="ignore"):
                return width * exponent * np.power(alpha, exponent - 1.0)

        name = "uniform" if exponent == 1.0 else f"power({exponent:g})"
        return cls.from_function(func, slope, grid, name)

    @classmethod
    def uniform(cls, lo=0.0, hi=1.0, grid=None):
        return cls.power(1.0, lo, hi, grid)

    @classmethod
    def from_table(cls, alpha, values, grid=None, name="tabulated"):
        """
        Monotone cubic interpolation of tabulated ``(alpha, value)`` pairs.
        """
        alpha = np.asarray(alpha, dtype=float)
        values = np.asarray(values, dtype=float)
        if alpha[0] != 0.0 or alpha[-1] != 1.0:
            raise ValidationError("tabulated values must cover alpha = 0 and alpha = 1")
        spline = PchipInterpolator(alpha, values)
        slope = spline.derivative()
        grid = alpha if grid is None and alpha.size >= 200 else grid
        grid = chebyshev_grid() if grid is None else check_grid(grid)
        return cls(spline, grid, np.asarray(spline(grid), dtype=float), None, name)._with_slope(slope)

    def _with_slope(self, slope):
        object.__setattr__(self, "_table_slope", slope)
        return self

    def __call__(self, alpha):
        return np.asarray(self.func(np.asarray(alpha, dtype=float)), dtype=float)

    @property
    def v_lo(self):
        return float(self.values[0])

    @property
    def v_hi(self):
        return float(self.values[-1])

    def slope(self, alpha):
        """
        ``V'(alpha)``, analytic when available.
        """
        alpha = np.asarray(alpha, dtype=float)
        if self.derivative is not None:
            return np.asarray(self.derivative(alpha), dtype=float)
        table_slope = getattr(self, "_table_slope", None)
        if table_slope is None:
            table_slope = PchipInterpolator(self.grid, derivative(self.grid, self.values))
            self._with_slope(table_slope)
        return np.asarray(table_slope(alpha), dtype=float)

    def cdf(self, v):
        """
        ``F(v)``, the inverse of the quantile function.
        """
        v = np.asarray(v, dtype=float)
        out = invert_increasing(
            self, v, self.grid, self.values, slope=lambda x, _: self.slope(x)
        )
        return out.reshape(v.shape)

    def density(self, v):
        """
        ``f(v) = 1 / V'(F(v))``, zero outside the support.
        """
        v = np.asarray(v, dtype=float)
        with np.errstate(divide="ignore"):
            dens = 1.0 / self.slope(self.cdf(v))
        inside = (v >= self.v_lo) & (v <= self.v_hi)
        return np.where(inside, np.nan_to_num(dens, posinf=0.0), 0.0).reshape(v.shape)

    def compose(self, offset, scale, name=None):
        """
        Return ``alpha -> V(offset + scale * alpha)``.

        This is the quantile function of values conditional on exceeding
        ``V(offset)`` when ``scale = 1 - offset``.
        """
        slope = None
        if self.derivative is not None:
            def slope(alpha):
                return scale * self.slope(offset + scale * np.asarray(alpha, dtype=float))

        def func(alpha):
            return self(offset + scale * np.asarray(alpha, dtype=float))

        return ValueQuantile.from_function(
            func, slope, self.grid, name or f"{self.name}|>{offset:.4g}"
        )

    def to_frame(self):
        return {"alpha": self.grid, "value": self.values}


@dataclasses.dataclass(frozen=True)
class CompetitionPMF:
    """
    Distribution of the number of active bidders on ``n_lo..n_hi``.
    """

    n_lo: int
    weights: tuple

    def __post_init__(self):
        _check_bidders(self.n_lo, "n_lo")
        weights = np.asarray(self.weights, dtype=float)
        if weights.ndim != 1 or weights.size == 0:
            raise ValidationError("weights must be a nonempty vector")
        if np.any(weights <= 0):
            raise ValidationError("all competition weights must be strictly positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValidationError(f"competition weights sum to {weights.sum():.15g}, not 1")
        object.__setattr__(self, "weights", tuple(float(_) for _ in weights))

    @classmethod
    def normalized(cls, n_lo, weights):
        weights = np.asarray(weights, dtype=float)
        return cls(n_lo, tuple(weights / weights.sum()))

    @property
    def n_hi(self):
        return self.n_lo + len(self.weights) - 1

    @property
    def support(self):
        return np.arange(self.n_lo, self.n_hi + 1)

    def probability(self, n):
        if n < self.n_lo or n > self.n_hi:
            return 0.0
        return self.weights[n - self.n_lo]

    def cdf(self):
        return np.cumsum(self.weights)


def known_bid_values(value, k, alpha):
    """
    ``k * int_0^1 u**(k - 1) V(alpha u) du`` on graded panels.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    nodes, weights = graded_rule()
    kernel = k * weights * np.power(nodes, k - 1.0)
    out = np.empty_like(alpha)
    for start in range(0, alpha.size, CHUNK):
        part = alpha[start:start + CHUNK]
        out[start:start + CHUNK] = value(part[:, None] * nodes[None, :]) @ kernel
    out[alpha == 0.0] = value.v_lo
    return out


def unknown_bid_values(value, m, q, alpha):
    """
    Bids when bidders do not observe the number of participants.

    ``m`` is the number of potential opponents and ``q`` the probability
    that a potential opponent stays out. Integrating the equilibrium
    condition by parts gives

        B(a) = [q**m V(0) + int_0^a m (1 - q) (q + (1 - q) t)**(m - 1) V(t) dt]
               / (q + (1 - q) a)**m
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    nodes, weights = graded_rule()
    out = np.empty_like(alpha)
    for start in range(0, alpha.size, CHUNK):
        part = alpha[start:start + CHUNK, None]
        level = q + (1.0 - q) * part
        ratio = (q + (1.0 - q) * part * nodes[None, :]) / level
        body = (m * (1.0 - q) * part / level) * np.power(ratio, m - 1.0)
        integral = (body * value(part * nodes[None, :])) @ weights
        out[start:start + CHUNK] = np.power(q / level[:, 0], m) * value.v_lo + integral
    out[alpha == 0.0] = value.v_lo
    return out


@dataclasses.dataclass(frozen=True, eq=False)
class BidQuantile:
    """
    Equilibrium bid quantile tabulated on a quantile grid.

    ``n`` is the number of active bidders under ``info == "known"`` and the
    number of potential bidders under ``info == "unknown"``, in which case
    ``screening`` is the probability a potential bidder stays out.
    """

    n: int
    theta: float
    grid: np.ndarray
    values: np.ndarray
    source: ValueQuantile
    info: str = KNOWN_N
    screening: float = 0.0

    def __post_init__(self):
        bad = ~np.isfinite(self.values)
        if bad.any():
            at = self.grid[int(np.argmax(bad))]
            raise QuadratureError(f"bid integral is not finite at alpha={at:.6g}")

    @property
    def opponents(self):
        return (self.n - 1) / self.theta

    @property
    def b_hi(self):
        return float(self.values[-1])

    @property
    def b_lo(self):
        return float(self.values[0])

    def __call__(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        if self.info == KNOWN_N:
            out = known_bid_values(self.source, self.opponents, np.clip(alpha, 0.0, 1.0))
        else:
            out = unknown_bid_values(
                self.source, self.n - 1, self.screening, np.clip(alpha, 0.0, 1.0)
            )
        return out.reshape(alpha.shape)

    @functools.cached_property
    def _spline(self):
        return PchipInterpolator(self.grid, self.values)

    def interpolate(self, alpha):
        """
        Fast monotone interpolation of the tabulation.
        """
        return self._spline(np.clip(alpha, 0.0, 1.0))

    @functools.cached_property
    def slopes(self):
        """
        ``B'`` on the grid from the equilibrium condition.
        """
        return self._slope(self.grid, self.values)

    def _slope(self, alpha, bids):
        alpha = np.asarray(alpha, dtype=float)
        value = self.source(alpha)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.info == KNOWN_N:
                k = self.opponents
                out = k * (value - bids) / alpha
            else:
                q = self.screening
                out = (self.n - 1) * (1.0 - q) * (value - bids) / (q + (1.0 - q) * alpha)
        zero = alpha == 0.0
        if np.any(zero):
            out = np.where(zero, self._slope_at_zero(), out)
        return out

    def _slope_at_zero(self):
        if self.info == UNKNOWN_N and self.screening > 0:
            return 0.0
        k = self.opponents if self.info == KNOWN_N else float(self.n - 1)
        start = float(self.source.slope(0.0))
        if np.isnan(start):
            start = float(derivative(self.source.grid, self.source.values)[0])
        return k / (k + 1.0) * start

    def slope(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        return self._slope(alpha, self(alpha)).reshape(alpha.shape)

    def inverse(self, b):
        """
        ``G_n(b) = B**-1(b)``, clipped to [0, 1] outside the bid support.
        """
        b = np.asarray(b, dtype=float)
        out = invert_increasing(self, b, self.grid, self.values, slope=self._slope)
        return out.reshape(b.shape)

    def density(self, b):
        """
        ``g_n(b) = 1 / B'(G_n(b))`` on the closed support, 0 elsewhere.
        """
        b = np.asarray(b, dtype=float)
        level = self.inverse(b)
        with np.errstate(divide="ignore"):
            dens = 1.0 / self.slope(level)
        inside = (b >= self.b_lo) & (b <= self.b_hi)
        return np.where(inside, np.nan_to_num(dens, posinf=0.0), 0.0).reshape(b.shape)

    def to_frame(self):
        return {"alpha": self.grid, "value": self.values}


def bid_quantile_from_value(V, n, theta=1.0, grid=None):
    """
    Equilibrium bid quantile of ``n`` bidders with CRRA exponent ``theta``.

    :param V: Value quantile function
    :type V: ``ValueQuantile``
    :param n: Number of active bidders
    :type n: int
    :param theta: CRRA exponent in (0, 1], 1 is risk neutral
    :type theta: float
    :param grid: Quantile grid, defaults to the grid of ``V``
    :type grid: ``numpy.ndarray``

    :return: The tabulated bid quantile
    :rtype: ``BidQuantile``
    """
    n = _check_bidders(n)
    theta = _check_theta(theta)
    grid = V.grid if grid is None else check_grid(grid)
    values = known_bid_values(V, (n - 1) / theta, grid)
    bid = BidQuantile(n, theta, grid, values, V)
    if np.any(np.diff(values) <= 0):
        at = grid[int(np.argmax(np.diff(values) <= 0))]
        raise QuadratureError(f"bid quantile for n={n} is not increasing near alpha={at:.6g}")
    log.debug("Tabulated B_%d (theta=%g): b_hi=%.10g", n, theta, bid.b_hi)
    return bid


def implied_values(B):
    """
    ``V = B + theta * alpha * B' / (n - 1)`` with three point derivatives.
    """
    slope = derivative(B.grid, B.values)
    return B.values + B.theta * B.grid * slope / (B.n - 1)


def value_from_bid_quantile(B):
    """
    Invert the equilibrium condition to recover the value quantile.

    :param B: A known-N bid quantile
    :type B: ``BidQuantile``

    :raises IncompatibleBidError: If the implied values are not increasing

    :return: The recovered value quantile
    :rtype: ``ValueQuantile``
    """
    values = implied_values(B)
    steps = np.diff(values)
    if np.any(steps <= 0):
        at = B.grid[int(np.argmax(steps <= 0))]
        raise IncompatibleBidError(
            f"incompatible bid quantile for n={B.n}: implied values decrease near alpha={at:.6g}"
        )
    return ValueQuantile.from_table(B.grid, values, name=f"recovered from B_{B.n}")


@dataclasses.dataclass(frozen=True)
class CompatibilityReport:
    compatible: bool
    discrepancy: float
    monotone: dict
    tolerance: float
    alpha_floor: float

    def as_dict(self):
        return dataclasses.asdict(self)


def compatibility_check(
    bids, tolerance=DEFAULT_COMPATIBILITY_TOLERANCE, alpha_floor=DEFAULT_ALPHA_FLOOR
):
    """
    Check that several bid quantiles are generated by one value quantile.

    :param bids: At least two bid quantiles sharing a grid
    :type bids: list

    :return: The largest pairwise discrepancy of the implied values on
        ``[alpha_floor, 1]`` and a monotonicity verdict per bid quantile
    :rtype: ``CompatibilityReport``
    """
    bids = list(bids)
    if len(bids) < 2:
        raise ValidationError("compatibility needs at least two bid quantiles")
    grid = bids[0].grid
    for bid in bids[1:]:
        if bid.grid.shape != grid.shape or np.any(bid.grid != grid):
            raise ValidationError("bid quantiles must share a grid")
    implied = [implied_values(bid) for bid in bids]
    monotone = {}
    for bid, values in zip(bids, implied):
        monotone[f"B{bid.n}"] = bool(np.all(np.diff(values) > 0))
    window = grid >= alpha_floor
    discrepancy = 0.0
    for i, first in enumerate(implied):
        for second in implied[i + 1:]:
            discrepancy = max(discrepancy, float(np.max(np.abs(first - second)[window])))
    compatible = discrepancy < tolerance and all(monotone.values())
    log.info("Compatibility discrepancy %.3g (tolerance %.3g)", discrepancy, tolerance)
    return CompatibilityReport(compatible, discrepancy, monotone, tolerance, alpha_floor)


@dataclasses.dataclass(frozen=True, eq=False)
class WinningBidMixture:
    """
    Distribution of the winning bid ``G = sum_n p_n G_n**n``.
    """

    pmf: CompetitionPMF
    bids: tuple
    value: ValueQuantile
    theta: float = 1.0

    @property
    def lower(self):
        return self.value.v_lo

    @property
    def upper(self):
        return self.bids[-1].b_hi

    @property
    def jump_points(self):
        """
        ``(b_hi_n, Delta_n)`` with ``Delta_n = n p_n g_n(b_hi_n)``.
        """
        points = []
        for p, bid in zip(self.pmf.weights, self.bids):
            g_top = self.theta / ((bid.n - 1) * (self.value.v_hi - bid.b_hi))
            points.append((bid.b_hi, bid.n * p * g_top))
        return points

    def component_cdf(self, b):
        b = np.asarray(b, dtype=float)
        return np.stack([bid.inverse(b) for bid in self.bids])

    def cdf(self, b):
        b = np.asarray(b, dtype=float)
        total = np.zeros(b.shape)
        for p, bid, level in zip(self.pmf.weights, self.bids, self.component_cdf(b)):
            total = total + p * np.power(level, bid.n)
        return total

    def pdf(self, b):
        b = np.asarray(b, dtype=float)
        total = np.zeros(b.shape)
        for p, bid in zip(self.pmf.weights, self.bids):
            level = bid.inverse(b)
            total = total + p * bid.n * np.power(level, bid.n - 1) * bid.density(b)
        return total

    def interpolate_bids(self, n, alpha):
        return self.bids[n - self.pmf.n_lo].interpolate(alpha)


def winning_bid_mixture(V, pmf, theta=1.0, grid=None):
    """
    Assemble the winning bid distribution of a benchmark model.

    :param V: Value quantile
    :type V: ``ValueQuantile``
    :param pmf: Distribution of the number of bidders
    :type pmf: ``CompetitionPMF``

    :rtype: ``WinningBidMixture``
    """
    theta = _check_theta(theta)
    bids = tuple(bid_quantile_from_value(V, n, theta, grid) for n in pmf.support)
    mixture = WinningBidMixture(pmf, bids, V, theta)
    log.info(
        "Winning bid mixture n=%d..%d with jumps %s",
        pmf.n_lo,
        pmf.n_hi,
        ", ".join(f"{b:.4f}:{d:.4f}" for b, d in mixture.jump_points),
    )
    return mixture


def boundary_densities(V, n, theta=1.0):
    """
    Conditional bid density at both ends of its support.

    ``g_n(v_lo) = (k + 1) / k * f(v_lo)`` and
    ``g_n(b_hi) = theta / ((n - 1) (v_hi - b_hi))`` with ``k = (n - 1) / theta``.

    :raises DomainError: If ``V'`` is zero, negative or undefined at an end
    """
    n = _check_bidders(n)
    theta = _check_theta(theta)
    k = (n - 1) / theta
    start, end = (float(_) for _ in V.slope(np.array([0.0, 1.0])))
    for where, slope in (("0", start), ("1", end)):
        if np.isnan(slope) or slope <= 0 or (where == "1" and not np.isfinite(slope)):
            raise DomainError(f"V'({where}) = {slope} is outside the domain of the boundary formula")
    lower = 0.0 if np.isinf(start) else (k + 1.0) / k / start
    b_hi = float(known_bid_values(V, k, np.array([1.0]))[0])
    upper = theta / ((n - 1) * (V.v_hi - b_hi))
    return lower, upper


def tail_exponent_of_cdf(G, v_lo, t_grid=None):
    """
    Exponent of ``G(v_lo + t) ~ c t**kappa`` as ``t`` shrinks.

    The least squares slope of ``log G`` against ``log t`` is fitted over
    the smallest half of the offsets.

    :param G: Vectorized cdf
    :type G: callable
    :param v_lo: Lower support bound with ``G(v_lo) = 0``
    :type v_lo: float
    :param t_grid: Positive offsets, defaults to 1e-3 down to 1e-6

    :raises TailError: If the cdf vanishes on the whole grid
    """
    t_grid = np.logspace(-3, -6, 13) if t_grid is None else np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0):
        raise ValidationError("tail offsets must be positive")
    t_grid = np.sort(t_grid)
    values = np.asarray(G(v_lo + t_grid), dtype=float)
    if not np.any(values > 0):
        raise TailError("cdf vanishes on the whole offset grid")
    use = max(3, t_grid.size // 2)
    return fit_power_exponent(t_grid[:use], values[:use])
