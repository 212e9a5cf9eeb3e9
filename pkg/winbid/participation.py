# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
"""
Equilibria with endogenous participation.

Two models screen ``n_potential`` buyers before bidding:

* a reserve price ``R(z)``, where a buyer participates when its value
  exceeds ``R(z)``, so the screening level is ``q = F(R(z))``;
* an entry cost ``c(z)``, where a buyer enters when its signal exceeds the
  threshold ``s(z)`` solving the break-even condition, so ``q = s(z)``.

Active bidders either observe the number of participants (``known``) or not
(``unknown``).
"""
import dataclasses
import logging

import numpy as np
from scipy import optimize, stats
from scipy.interpolate import RegularGridInterpolator

from .common import KNOWN_N, UNKNOWN_N, ValidationError, check_info
from .equilibrium import (
    BidQuantile,
    CompetitionPMF,
    ValueQuantile,
    WinningBidMixture,
    _check_bidders,
    bid_quantile_from_value,
    unknown_bid_values,
)
from .numeric import TailError, chebyshev_grid, fit_power_exponent, gauss_legendre

log = logging.getLogger(__name__)

SCAN_POINTS = 64
SIGNAL_ORDER = 24
VALUE_PANELS = 8
VALUE_ORDER = 24


def linear_schedule(intercept, slope=0.0):
    """
    Return ``z -> intercept + slope * z``.
    """

    def schedule(z):
        return intercept + slope * float(z)

    schedule.intercept = intercept
    schedule.slope = slope
    return schedule


def unknown_bid_quantile(V, n_potential, screening, grid=None):
    """
    Bid quantile when active bidders do not observe the number of participants.

    :param V: Quantile function of participating values
    :type V: ``ValueQuantile``
    :param n_potential: Number of potential bidders
    :type n_potential: int
    :param screening: Probability that a potential bidder stays out
    :type screening: float

    :rtype: ``BidQuantile``
    """
    n_potential = _check_bidders(n_potential, "n_potential")
    if not 0.0 <= screening < 1.0:
        raise ValidationError(f"screening level must lie in [0, 1), got {screening}")
    grid = V.grid if grid is None else grid
    values = unknown_bid_values(V, n_potential - 1, screening, grid)
    return BidQuantile(n_potential, 1.0, grid, values, V, UNKNOWN_N, float(screening))


@dataclasses.dataclass(frozen=True, eq=False)
class ReserveModel:
    """
    Potential buyers participate when their value exceeds ``reserve_fn(z)``.
    """

    V: ValueQuantile
    n_potential: int
    reserve_fn: object
    info: str = KNOWN_N

    def __post_init__(self):
        _check_bidders(self.n_potential, "n_potential")
        check_info(self.info)

    def reserve(self, z=0.0):
        reserve = float(self.reserve_fn(z))
        if not self.V.v_lo < reserve < self.V.v_hi:
            raise ValidationError(
                f"reserve R(z={z}) = {reserve} must lie inside ({self.V.v_lo}, {self.V.v_hi})"
            )
        return reserve

    def screening(self, z=0.0):
        """
        ``q(z) = F(R(z))``.
        """
        return float(self.V.cdf(self.reserve(z)))

    def participant_values(self, z=0.0):
        """
        ``V_R(alpha) = V(q + (1 - q) alpha)``.
        """
        q = self.screening(z)
        return self.V.compose(q, 1.0 - q, name=f"{self.V.name}|R={self.reserve(z):.4g}")

    def lower_bid(self, z=0.0):
        return self.reserve(z)


def reserve_bid_known(model, n, grid=None, z=0.0):
    """
    Bid quantile of ``n`` participants who observe ``n``; starts at ``R(z)``.

    :rtype: ``BidQuantile``
    """
    if model.info != KNOWN_N:
        raise ValidationError("reserve_bid_known needs a model with info='known'")
    return bid_quantile_from_value(model.participant_values(z), n, 1.0, grid)


def reserve_bid_unknown(model, grid=None, z=0.0):
    """
    Bid quantile of participants who do not observe their number.

    :rtype: ``BidQuantile``
    """
    if model.info != UNKNOWN_N:
        raise ValidationError("reserve_bid_unknown needs a model with info='unknown'")
    return unknown_bid_quantile(
        model.participant_values(z), model.n_potential, model.screening(z), grid
    )


class ConditionalFamily:
    """
    A family of value cdfs ``F(v|s)`` indexed by the entry signal ``s``.

    Values live on ``[lo, hi]`` with ``lo >= 0``; ``F(v|s)`` must not increase
    with ``s``.

    :param cdf: Function of ``(x, s)`` with ``x = (v - lo) / (hi - lo)``
    :type cdf: callable
    """

    def __init__(self, cdf, lo=0.0, hi=1.0, name="custom"):
        if lo < 0 or hi <= lo:
            raise ValidationError(f"entry values need 0 <= lo < hi, got [{lo}, {hi}]")
        self._cdf = cdf
        self.lo = float(lo)
        self.hi = float(hi)
        self.name = name

    @classmethod
    def uniform(cls, lo=0.0, hi=1.0):
        """
        Signal-free uniform values, ``F(v|s) = x``.
        """
        return cls(lambda x, s: x + 0.0 * s, lo, hi, "uniform")

    @classmethod
    def power(cls, gamma, lo=0.0, hi=1.0):
        """
        ``F(v|s) = x**(1 + gamma s)``.
        """
        if gamma < 0:
            raise ValidationError(f"power family needs gamma >= 0, got {gamma}")
        return cls(lambda x, s: np.power(x, 1.0 + gamma * s), lo, hi, f"power({gamma:g})")

    @classmethod
    def tilted(cls, gamma, lo=0.0, hi=1.0):
        """
        ``F(v|s) = x + gamma s (x**2 - x)``, a density tilt towards high values.
        """
        if not 0.0 <= gamma <= 1.0:
            raise ValidationError(f"tilted family needs gamma in [0, 1], got {gamma}")
        return cls(lambda x, s: x + gamma * s * (x * x - x), lo, hi, f"tilted({gamma:g})")

    @classmethod
    def tabulated(cls, values, signals, table):
        """
        Bilinear interpolation of ``table[i, j] = F(values[i] | signals[j])``.
        """
        values = np.asarray(values, dtype=float)
        table = np.asarray(table, dtype=float)
        interp = RegularGridInterpolator((values, np.asarray(signals, dtype=float)), table)
        lo, hi = float(values[0]), float(values[-1])

        def cdf(x, s):
            x, s = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(s, dtype=float))
            points = np.stack([lo + (hi - lo) * x, s], axis=-1)
            return interp(points.reshape(-1, 2)).reshape(x.shape)

        return cls(cdf, lo, hi, "tabulated")

    def cdf(self, v, s):
        """
        ``F(v|s)``, 0 below ``lo`` and 1 above ``hi``.
        """
        v = np.asarray(v, dtype=float)
        x = np.clip((v - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        return np.clip(self._cdf(x, np.asarray(s, dtype=float)), 0.0, 1.0)

    def entrant_cdf(self, v, s):
        """
        ``F_c(v|s) = int_s^1 F(v|t) dt / (1 - s)``, values of entrants with
        signals above ``s``.
        """
        v = np.asarray(v, dtype=float)
        s = float(s)
        if s >= 1.0:
            return self.cdf(v, 1.0)
        nodes, weights = gauss_legendre(SIGNAL_ORDER)
        signals = s + (1.0 - s) * nodes
        table = self.cdf(v[..., None], signals)
        return table @ weights

    def is_monotone(self, points=SCAN_POINTS):
        """
        Check that ``F(v|s)`` does not increase with ``s`` on a scan grid.
        """
        v = np.linspace(self.lo, self.hi, points)
        s = np.linspace(0.0, 1.0, points)
        table = self.cdf(v[:, None], s[None, :])
        return bool(np.all(np.diff(table, axis=1) <= 1e-12))


@dataclasses.dataclass(frozen=True, eq=False)
class EntryModel:
    """
    Potential buyers pay ``cost_fn(z)`` to learn their value and bid.
    """

    family: ConditionalFamily
    n_potential: int
    cost_fn: object
    info: str = KNOWN_N

    def __post_init__(self):
        _check_bidders(self.n_potential, "n_potential")
        check_info(self.info)
        if not self.family.is_monotone():
            raise ValidationError(f"conditional family {self.family.name} increases with s")

    def payoff(self, s):
        """
        Break-even payoff ``Pi(s; s)`` of the marginal entrant.

            Pi(s; s) = int_0^hi [1 - F(v|s)] [s + (1 - s) F_c(v|s)]**(n - 1) dv
        """
        nodes, weights = gauss_legendre(VALUE_ORDER)
        edges = np.concatenate([[0.0], np.linspace(self.family.lo, self.family.hi, VALUE_PANELS + 1)])
        edges = np.unique(edges)
        width = np.diff(edges)
        v = (edges[:-1, None] + width[:, None] * nodes[None, :]).ravel()
        w = (width[:, None] * weights[None, :]).ravel()
        s = float(s)
        opponents = s + (1.0 - s) * self.family.entrant_cdf(v, s)
        integrand = (1.0 - self.family.cdf(v, s)) * np.power(opponents, self.n_potential - 1)
        return float(integrand @ w)

    def cost(self, z=0.0):
        return float(self.cost_fn(z))

    def entrant_values(self, s):
        """
        ``V_c(.|s)``, the quantile function of ``F_c(.|s)``.
        """
        family = self.family
        if family.name == "uniform":
            return ValueQuantile.uniform(family.lo, family.hi)
        support = family.lo + (family.hi - family.lo) * chebyshev_grid(4001)
        levels = family.entrant_cdf(support, s)
        levels[0], levels[-1] = 0.0, 1.0
        keep = np.concatenate([[True], np.diff(levels) > 0])
        return ValueQuantile.from_table(
            levels[keep], support[keep], grid=chebyshev_grid(), name=f"{family.name}|s={s:.4g}"
        )

    def lower_bid(self, z=0.0):
        return self.family.lo


@dataclasses.dataclass(frozen=True)
class EntryThreshold:
    """
    Solution of the break-even condition.

    ``regime`` is ``interior``, ``all_enter`` (``s = 0``) or ``none_enter``
    (``s = 1``).
    """

    s: float
    cost: float
    regime: str
    monotone: bool


def entry_threshold(model, z=0.0):
    """
    Solve ``Pi(s; s) = c(z)`` for the entry threshold.

    :param model: The entry model
    :type model: ``EntryModel``
    :param z: Instrument value
    :type z: float

    :rtype: ``EntryThreshold``
    """
    cost = model.cost(z)
    scan = np.linspace(0.0, 1.0, SCAN_POINTS)
    payoffs = np.array([model.payoff(s) for s in scan])
    monotone = bool(np.all(np.diff(payoffs) >= -1e-12))
    if not monotone:
        log.warning("Break-even payoff is not monotone in s for %s", model.family.name)
    tol = 1e-12 * max(1.0, abs(cost))
    if cost <= payoffs[0] + tol:
        log.info("Entry cost %.6g is below Pi(0;0)=%.6g: all buyers enter", cost, payoffs[0])
        return EntryThreshold(0.0, cost, "all_enter", monotone)
    if cost >= payoffs[-1] - tol:
        log.info("Entry cost %.6g is above Pi(1;1)=%.6g: nobody enters", cost, payoffs[-1])
        return EntryThreshold(1.0, cost, "none_enter", monotone)
    idx = int(np.argmax(payoffs >= cost))
    s = optimize.brentq(
        lambda s: model.payoff(s) - cost, scan[idx - 1], scan[idx], xtol=1e-14, rtol=1e-14
    )
    log.debug("Entry threshold s(%s) = %.12g for cost %.6g", z, s, cost)
    return EntryThreshold(float(s), cost, "interior", monotone)


def entry_bid_known(model, n, z=0.0, grid=None):
    """
    Bid quantile of ``n`` entrants who observe ``n``; starts at ``lo``.
    """
    if model.info != KNOWN_N:
        raise ValidationError("entry_bid_known needs a model with info='known'")
    s = entry_threshold(model, z).s
    return bid_quantile_from_value(model.entrant_values(s), n, 1.0, grid)


def entry_bid_unknown(model, z=0.0, grid=None):
    """
    Bid quantile of entrants who do not observe their number.
    """
    if model.info != UNKNOWN_N:
        raise ValidationError("entry_bid_unknown needs a model with info='unknown'")
    s = entry_threshold(model, z).s
    return unknown_bid_quantile(model.entrant_values(s), model.n_potential, s, grid)


@dataclasses.dataclass(frozen=True, eq=False)
class OutcomeDistribution:
    """
    Law of the auction outcome at one instrument value.

    ``p_lone`` is the probability of exactly one participant. Under
    ``known`` information the lone participant pays ``atom_price`` and
    ``p_atom == p_lone``; under ``unknown`` information the lone participant
    bids ``bid(U)`` and ``p_atom == 0``.
    """

    info: str
    n_potential: int
    screening: float
    p_not_sold: float
    p_lone: float
    p_atom: float
    atom_price: float
    values: ValueQuantile
    mixture: object = None
    bid: object = None

    @property
    def upper(self):
        if self.info == KNOWN_N:
            return self.mixture.upper if self.mixture is not None else self.atom_price
        return self.bid.b_hi

    @property
    def lower(self):
        return self.values.v_lo

    def competitive_cdf(self, b):
        """
        cdf of prices of competitive sales.
        """
        b = np.asarray(b, dtype=float)
        if self.info == KNOWN_N:
            return self.mixture.cdf(b)
        return self.sold_cdf(b)

    def sold_cdf(self, b):
        """
        ``P(W <= b | Sold)``.
        """
        b = np.asarray(b, dtype=float)
        sold = 1.0 - self.p_not_sold
        if self.info == KNOWN_N:
            atom = np.where(b >= self.atom_price, self.p_lone, 0.0)
            rest = 0.0 if self.mixture is None else (sold - self.p_lone) * self.mixture.cdf(b)
            return (atom + rest) / sold
        q, n = self.screening, self.n_potential
        level = q + (1.0 - q) * self.bid.inverse(b)
        return (np.power(level, n) - q ** n) / sold

    @property
    def upper_slope(self):
        """
        Slope at the upper bound of ``b -> (1 - P0) G(b|Sold) + P0``.
        """
        n = self.n_potential
        gap = self.values.v_hi - self.upper
        if self.info == KNOWN_N:
            return (1.0 - self.screening) ** n * n / ((n - 1) * gap)
        return n / ((n - 1) * gap)


def _known_weights(n_potential, q):
    support = np.arange(2, n_potential + 1)
    weights = stats.binom.pmf(support, n_potential, 1.0 - q)
    keep = weights > 0
    if not keep.any():
        return None
    support = support[keep]
    if np.any(np.diff(support) != 1):
        raise ValidationError("screening level leaves gaps in the competition support")
    return CompetitionPMF.normalized(int(support[0]), weights[keep])


def outcome_distribution(model, z=0.0, grid=None):
    """
    Outcome law of a reserve or entry model at instrument value ``z``.

    :param model: A participation model
    :type model: ``ReserveModel`` or ``EntryModel``

    :rtype: ``OutcomeDistribution``
    """
    n = model.n_potential
    if isinstance(model, ReserveModel):
        q = model.screening(z)
        values = model.participant_values(z)
        atom_price = model.reserve(z)
    else:
        q = entry_threshold(model, z).s
        values = model.entrant_values(q)
        atom_price = 0.0
    p_not_sold = q ** n
    p_lone = n * q ** (n - 1) * (1.0 - q)
    if model.info == KNOWN_N:
        pmf = _known_weights(n, q) if q < 1.0 else None
        mixture = None
        if pmf is not None:
            bids = tuple(bid_quantile_from_value(values, m, 1.0, grid) for m in pmf.support)
            mixture = WinningBidMixture(pmf, bids, values, 1.0)
        return OutcomeDistribution(
            KNOWN_N, n, q, p_not_sold, p_lone, p_lone, atom_price, values, mixture=mixture
        )
    bid = unknown_bid_quantile(values, n, min(q, 1.0 - 1e-12), grid)
    return OutcomeDistribution(UNKNOWN_N, n, q, p_not_sold, p_lone, 0.0, atom_price, values, bid=bid)


def lower_tail_divergence_check(cdf, lower, t_grid=None):
    """
    Fit ``G(lower + t) ~ c t**kappa`` near the lower bound of a sold-price cdf.

    ``kappa`` is near 1/2 when the bid density diverges at the lower bound
    (bidders ignore the number of participants) and at least 2 when the
    bidders observe it.

    :param cdf: Vectorized cdf
    :type cdf: callable
    :param lower: Known lower support bound
    :type lower: float

    :raises TailError: If the cdf carries no mass on the offsets
    """
    t_grid = np.logspace(-4, -7, 13) if t_grid is None else np.asarray(t_grid, dtype=float)
    t_grid = np.sort(t_grid)
    values = np.asarray(cdf(lower + t_grid), dtype=float) - np.asarray(cdf(lower), dtype=float)
    if not np.any(values > 0):
        raise TailError(f"no tail mass above {lower}")
    use = max(3, t_grid.size // 2)
    return fit_power_exponent(t_grid[:use], values[:use])


def lower_tail_exponent_from_sample(prices, lower=None, top_share=0.02, min_rank=10):
    """
    Fit the lower tail exponent of a price sample from its order statistics.

    Regresses ``log(j / L)`` on ``log(W_(j) - lower)`` for ranks ``j``
    between ``min_rank`` and ``top_share * L``. Without a known ``lower``
    bound the sample minimum minus the first spacing is used.

    :raises TailError: If too few ranks are available
    """
    prices = np.sort(np.asarray(prices, dtype=float))
    size = prices.size
    if size < 3:
        raise TailError("tail fit needs at least 3 prices")
    if lower is None:
        lower = prices[0] - (prices[1] - prices[0])
    ranks = np.arange(1, size + 1)
    first = max(min_rank, int(np.ceil(0.0005 * size)))
    last = max(first + 10, int(np.ceil(top_share * size)))
    window = (ranks >= first) & (ranks <= min(last, size))
    offsets = prices[window] - lower
    if window.sum() < 10 or np.sum(offsets > 0) < 10:
        raise TailError(f"tail fit needs more observations near the lower bound, got {size}")
    return fit_power_exponent(offsets, ranks[window] / size)
