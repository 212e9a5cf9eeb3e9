# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
"""
Identification under endogenous participation.

Outcomes are summarized per instrument value ``z`` into
``InstrumentedOutcome`` instances, either exactly from a participation model
or empirically from a sample. The screening level ``q(z)`` and the largest
number of potential bidders follow from the not sold and lone participant
frequencies, from the binomial shape of the competition weights, or from the
slope of the outcome cdf at its upper bound across instrument values. The
discrimination tests compare the evidence across ``z``.
"""
import dataclasses
import itertools
import logging

import numpy as np
from scipy import optimize, stats

from .common import KNOWN_N, UNKNOWN_N, ValidationError, WinbidException, check_info
from .config import DetectionConfig, EndogenousConfig, RecoveryConfig
from .detect import detect_jumps, window_size
from .competition import identify_competition
from .equilibrium import ValueQuantile
from .numeric import EmpiricalDistribution, TailError, gauss_legendre
from .participation import (
    lower_tail_divergence_check,
    lower_tail_exponent_from_sample,
    outcome_distribution,
)
from .recover import iterate_recovery

log = logging.getLogger(__name__)

OBSERVE_N = "BuyersObserveN"
IGNORE_N = "BuyersDoNotObserveN"
RESERVE = "ReservePrice"
ENTRY = "EntryCost"
INCONCLUSIVE = "Inconclusive"

COST_PANELS = 8
COST_ORDER = 24
ATOM_EDGE = 1e-15


class NotIdentifiedError(WinbidException):
    """
    Raised when the outcomes do not pin down the requested primitive.
    """


class InfeasibleAtomsError(ValidationError):
    """
    Raised when not sold and lone participant frequencies fit no binomial.
    """


def binomial_weights(n_hi, q, n_lo=2):
    """
    Weights of ``Binomial(n_hi, 1 - q)`` on ``n_lo..n_hi``, renormalized.
    """
    support = np.arange(n_lo, n_hi + 1)
    weights = stats.binom.pmf(support, n_hi, 1.0 - q)
    total = weights.sum()
    return weights / total if total > 0 else weights


def _weights_of(competition, n_lo):
    if hasattr(competition, "support") and hasattr(competition, "probability"):
        support = np.asarray(competition.support, dtype=int)
        return int(support[0]), np.array([competition.probability(n) for n in support], dtype=float)
    weights = np.asarray(competition, dtype=float)
    return n_lo, weights / weights.sum()


def _value_table(values):
    """
    ``(alpha, value)`` arrays of a ``ValueQuantile`` or a recovered value.
    """
    if isinstance(values, ValueQuantile):
        return np.asarray(values.grid), np.asarray(values.values)
    return np.asarray(values.alpha), np.asarray(values.values)


@dataclasses.dataclass(frozen=True, eq=False)
class ReserveIdentification:
    """
    Screening level and value quantile when bidders observe their number.

    ``value_alpha`` and ``value`` tabulate ``V`` on ``[q, 1]`` when the
    participant values were supplied.
    """

    reserve: float
    n_hi: int
    screening: float
    screening_fit: float
    lack_of_fit: float
    misfit: bool
    source: str
    value_alpha: np.ndarray = None
    value: np.ndarray = None

    def as_dict(self):
        return {
            "reserve": self.reserve,
            "n_hi": self.n_hi,
            "screening": self.screening,
            "screening_fit": self.screening_fit,
            "lack_of_fit": self.lack_of_fit,
            "misfit": self.misfit,
            "source": self.source,
        }


def identify_reserve_knownN(
    competition, n_lo=2, reserve=None, values=None, p_not_sold=None, config=None
):
    """
    Screening level ``q = F(R)`` from the binomial shape of the competition
    weights.

    With ``n`` the largest number of bidders, ``n p_n / p_{n-1} = (1 - q) / q``.
    The weights are also fitted to the binomial family by least squares;
    the largest deviation of the closed form weights is the lack of fit.

    :param competition: Competition weights on ``n_lo..n``, a
        ``CompetitionEstimate``, a ``CompetitionPMF`` or a sequence
    :param reserve: Lower bound of the prices, reported as ``R``
    :param values: Participant value quantile, ``V_R``, to compose into ``V``
    :param p_not_sold: Not sold frequency, used when only one component is
        present

    :raises NotIdentifiedError: With a single component and no
        ``p_not_sold``
    :rtype: ``ReserveIdentification``
    """
    config = config or EndogenousConfig()
    n_lo, weights = _weights_of(competition, n_lo)
    n_hi = n_lo + weights.size - 1
    if weights.size < 2:
        if p_not_sold is None:
            raise NotIdentifiedError(
                f"n_hi={n_hi}: the screening level is identified from the not sold "
                "frequency of the outcomes, not from the price distribution"
            )
        if not 0.0 < p_not_sold < 1.0:
            raise ValidationError(f"p_not_sold must lie in (0, 1), got {p_not_sold}")
        q = float(p_not_sold) ** (1.0 / n_hi)
        q_fit, lack, source = q, 0.0, "atoms"
    else:
        previous, top = weights[-2], weights[-1]
        q = float(previous / (previous + n_hi * top))

        def loss(x):
            return float(np.sum((binomial_weights(n_hi, x, n_lo) - weights) ** 2))

        fit = optimize.minimize_scalar(loss, bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-12})
        q_fit = float(fit.x)
        lack = float(np.max(np.abs(binomial_weights(n_hi, q, n_lo) - weights)))
        source = "weights"
    misfit = lack > config.binomial_tolerance
    if misfit:
        log.warning("Competition weights deviate from the binomial family by %.4g", lack)
    alpha = value = None
    if values is not None:
        table_alpha, value = _value_table(values)
        alpha = q + (1.0 - q) * table_alpha
    log.info("Reserve model: n_hi=%d, F(R)=%.6g from %s", n_hi, q, source)
    return ReserveIdentification(
        reserve, n_hi, q, q_fit, lack, misfit, source, alpha, value
    )


def phi(x):
    """
    ``(1 - x) / (x ln x)``, increasing from ``-inf`` to ``-1`` on ``(0, 1)``.
    """
    x = np.asarray(x, dtype=float)
    return (1.0 - x) / (x * np.log(x))


@dataclasses.dataclass(frozen=True)
class AtomIdentification:
    screening: float
    n_hi: int
    n_real: float
    residual: float
    misfit: bool

    def as_dict(self):
        return dataclasses.asdict(self)


def identify_reserve_unknownN_atoms(p_not_sold, p_atom, config=None):
    """
    Screening level and number of potential bidders from
    ``P(N = 0) = q**n`` and ``P(N = 1) = n q**(n - 1) (1 - q)``.

    ``q`` solves ``phi(q) = P(N = 1) / (P(N = 0) ln P(N = 0))`` and
    ``n = ln P(N = 0) / ln q`` is rounded, its distance to the nearest
    integer reported as the residual.

    :raises InfeasibleAtomsError: If the frequencies fit no binomial
    :rtype: ``AtomIdentification``
    """
    config = config or EndogenousConfig()
    if not 0.0 < p_not_sold < 1.0:
        raise InfeasibleAtomsError(f"p_not_sold must lie in (0, 1), got {p_not_sold}")
    if not p_atom > 0.0:
        raise InfeasibleAtomsError(f"p_atom must be positive, got {p_atom}")
    if not p_not_sold + p_atom < 1.0:
        raise InfeasibleAtomsError(
            f"p_not_sold + p_atom must stay below 1, got {p_not_sold + p_atom}"
        )
    target = p_atom / (p_not_sold * np.log(p_not_sold))
    lo, hi = ATOM_EDGE, 1.0 - ATOM_EDGE
    if not phi(lo) < target < phi(hi):
        raise InfeasibleAtomsError(
            f"p_atom / (p_not_sold ln p_not_sold) = {target:.6g} lies outside ({phi(lo):.3g}, -1)"
        )
    q = optimize.brentq(lambda x: float(phi(x)) - target, lo, hi, xtol=1e-15, rtol=1e-15)
    n_real = float(np.log(p_not_sold) / np.log(q))
    n_hi = int(round(n_real))
    residual = abs(n_real - n_hi)
    misfit = residual > config.integrality_tolerance or n_hi < 2
    if misfit:
        log.warning("Atoms imply n=%.4g, residual %.3g from an integer", n_real, residual)
    return AtomIdentification(float(q), n_hi, n_real, float(residual), bool(misfit))


@dataclasses.dataclass(frozen=True, eq=False)
class InstrumentedOutcome:
    """
    Outcome summary at one instrument value.

    ``upper_slope`` is the slope at ``upper`` of the unconditional price cdf
    ``P(W <= b)`` with not sold auctions at the bottom. ``values`` and
    ``screening`` are set when the participant values are known, exactly or
    recovered.
    """

    z: float
    p_not_sold: float
    p_atom: float
    p_lone: float
    lower: float
    upper: float
    upper_slope: float
    n_obs: int = 0
    prices: np.ndarray = None
    kappa: float = None
    interior_jumps: int = None
    atom: bool = False
    atom_value: float = None
    atom_count: int = 0
    competition: object = None
    values: object = None
    screening: float = None

    def __post_init__(self):
        for name in ("p_not_sold", "p_atom", "p_lone"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"z={self.z}: {name} must lie in [0, 1], got {value}")
        if self.lower > self.upper:
            raise ValidationError(f"z={self.z}: lower bound {self.lower} exceeds {self.upper}")

    def as_dict(self):
        return {
            "z": self.z,
            "n_obs": self.n_obs,
            "p_not_sold": self.p_not_sold,
            "p_atom": self.p_atom,
            "p_lone": self.p_lone,
            "lower": self.lower,
            "upper": self.upper,
            "upper_slope": self.upper_slope,
            "kappa": self.kappa,
            "interior_jumps": self.interior_jumps,
            "atom": self.atom,
            "atom_value": self.atom_value,
            "atom_count": self.atom_count,
            "screening": self.screening,
        }


def instrumented_outcome_from_model(model, z=0.0, grid=None):
    """
    Exact outcome summary of a reserve or entry model at ``z``.

    :rtype: ``InstrumentedOutcome``
    """
    law = outcome_distribution(model, z, grid)
    lower = model.lower_bid(z)
    try:
        kappa = lower_tail_divergence_check(law.sold_cdf, lower)
    except TailError as exc:
        log.debug("No lower tail fit at z=%s: %s", z, exc)
        kappa = None
    jumps = 0
    competition = None
    if law.mixture is not None:
        competition = law.mixture.pmf
        jumps = len(competition.weights) - 1
    atom = law.p_atom > 0
    return InstrumentedOutcome(
        float(z),
        law.p_not_sold,
        law.p_atom,
        law.p_lone,
        lower,
        law.upper,
        law.upper_slope,
        kappa=kappa,
        interior_jumps=jumps,
        atom=atom,
        atom_value=law.atom_price if atom else None,
        competition=competition,
        values=law.values,
        screening=law.screening,
    )


def _upper_slope(sold, p_not_sold, top_share):
    """
    Least squares slope through the sample maximum of ``1 - P(W <= b)``.
    """
    size = sold.size
    levels = p_not_sold + (1.0 - p_not_sold) * np.arange(1, size + 1) / size
    start = min(int(np.floor((1.0 - top_share) * size)), size - 3)
    x = sold[-1] - sold[start:]
    y = 1.0 - levels[start:]
    denom = float(x @ x)
    return float(x @ y) / denom if denom > 0 else float("nan")


def _summarize(z, part, config, detection, recovery, recover_values):
    size = len(part)
    freq = part.frequencies()
    sold = np.sort(part.sold_prices())
    if sold.size < 3:
        raise ValidationError(f"z={z}: need at least 3 sales, got {sold.size}")
    threshold = max(config.atom_min_count, config.atom_share * size)
    at_zero = int(np.sum(sold == 0.0))
    at_min = int(np.sum(sold == sold[0]))
    atom_value, atom_count = (0.0, at_zero) if at_zero >= threshold else (float(sold[0]), at_min)
    atom = atom_count >= threshold
    competitive = part.competitive_prices()
    if part.atom.any():
        p_atom = freq["atom"]
    elif atom:
        p_atom = atom_count / size
        competitive = competitive[competitive != atom_value]
    else:
        p_atom = 0.0
    p_lone = freq["lone"] if part.lone is not None else p_atom
    try:
        kappa = lower_tail_exponent_from_sample(competitive)
    except TailError as exc:
        log.debug("No lower tail fit at z=%s: %s", z, exc)
        kappa = None
    interior = None
    competition = values = None
    try:
        jumps = detect_jumps(competitive, detection)
        k0 = window_size(detection.h0, competitive.size)
        interior = sum(1 for jump in jumps.interior if jump.index > k0)
        if recover_values and interior >= 1:
            estimate = identify_competition(jumps, 2)
            if estimate.passed:
                competition = estimate
                if competitive.size >= recovery.min_sample:
                    dist = EmpiricalDistribution(competitive, recovery.points)
                    values = iterate_recovery(dist.cdf, dist.pdf, estimate, dist.lower, recovery)
    except WinbidException as exc:
        log.warning("z=%s: competition not identified: %s", z, exc)
    return InstrumentedOutcome(
        float(z),
        freq["not_sold"],
        float(p_atom),
        float(p_lone),
        float(sold[0]),
        float(sold[-1]),
        _upper_slope(sold, freq["not_sold"], config.top_share),
        n_obs=size,
        prices=sold,
        kappa=kappa,
        interior_jumps=interior,
        atom=bool(atom),
        atom_value=atom_value if atom else None,
        atom_count=atom_count,
        competition=competition,
        values=values,
    )


def summarize_by_instrument(
    sample, config=None, detection=None, recovery=None, recover_values=False
):
    """
    Empirical outcome summaries per distinct instrument value.

    An atom is declared when at least ``max(atom_min_count, atom_share L)``
    sold prices coincide at 0 or at the sample minimum. With
    ``recover_values`` the competition and participant values are recovered
    per ``z`` wherever interior jumps are found.

    :param sample: Outcomes with a ``z`` column
    :type sample: ``winbid.outcomes.OutcomeSample``

    :rtype: list of ``InstrumentedOutcome``
    """
    if sample.z is None:
        raise ValidationError("z: summaries by instrument need a z column")
    config = config or EndogenousConfig()
    detection = detection or DetectionConfig()
    recovery = recovery or RecoveryConfig()
    return [
        _summarize(z, part, config, detection, recovery, recover_values)
        for z, part in sample.by_instrument().items()
    ]


def _participant_points(outcome, n_hi, screening, points):
    """
    Participant values ``v`` against their cdf ``F_X(v)`` at one ``z``.

    From the outcomes alone, ``V = b + n H(b) / ((n - 1) h(b))`` with ``H``
    the unconditional price cdf, and ``H**(1/n) = q + (1 - q) F_X``.
    """
    if outcome.values is not None:
        alpha, values = _value_table(outcome.values)
        return values, alpha
    if outcome.prices is None or not 0.0 <= screening < 1.0:
        return None
    dist = EmpiricalDistribution(outcome.prices)
    levels = np.linspace(0.02, 0.98, points)
    b = dist.quantile(levels)
    level = outcome.p_not_sold + (1.0 - outcome.p_not_sold) * levels
    density = (1.0 - outcome.p_not_sold) * dist.pdf(b)
    keep = density > 0
    values = b[keep] + n_hi / (n_hi - 1.0) * level[keep] / density[keep]
    share = (level[keep] ** (1.0 / n_hi) - screening) / (1.0 - screening)
    return values, np.clip(share, 0.0, 1.0)


def _on_grid(grid, values, levels, left=np.nan, right=np.nan):
    order = np.argsort(values)
    return np.interp(
        grid, values[order], np.maximum.accumulate(levels[order]), left=left, right=right
    )


@dataclasses.dataclass(frozen=True, eq=False)
class InstrumentIdentification:
    """
    Upper value bound, number of potential bidders and the value cdf
    stitched across instrument values.
    """

    v_hi: float
    v_hi_spread: float
    n_hi: int
    n_real: float
    residual: float
    misfit: bool
    screening: dict
    value_grid: np.ndarray = None
    cdf: np.ndarray = None
    overlap: float = None

    def as_dict(self):
        return {
            "v_hi": self.v_hi,
            "v_hi_spread": self.v_hi_spread,
            "n_hi": self.n_hi,
            "n_real": self.n_real,
            "residual": self.residual,
            "misfit": self.misfit,
            "screening": {str(z): q for z, q in self.screening.items()},
            "overlap": self.overlap,
        }


def _solve_upper(outcomes, config):
    usable = [
        o for o in outcomes if o.upper_slope is not None and np.isfinite(o.upper_slope) and o.upper_slope > 0
    ]
    estimates = []
    for a, b in itertools.combinations(usable, 2):
        if abs(a.upper - b.upper) <= 1e-9 * max(1.0, abs(a.upper)):
            continue
        if abs(b.upper_slope - a.upper_slope) <= 1e-12:
            continue
        estimates.append(
            (b.upper_slope * b.upper - a.upper_slope * a.upper) / (b.upper_slope - a.upper_slope)
        )
    if not estimates:
        raise NotIdentifiedError(
            "the upper bound of the prices does not vary with z; the upper value is not identified"
        )
    v_hi = float(np.mean(estimates))
    spread = float(np.max(estimates) - np.min(estimates))
    ratios = np.array([o.upper_slope * (v_hi - o.upper) for o in usable])
    ratios = ratios[ratios > 1.0]
    if ratios.size == 0:
        raise NotIdentifiedError(f"upper slopes are inconsistent with v_hi={v_hi:.6g}")
    n_real = float(np.mean(ratios / (ratios - 1.0)))
    n_hi = int(round(n_real))
    if n_hi < 2:
        raise NotIdentifiedError(f"upper slopes imply n={n_real:.4g} potential bidders")
    residual = abs(n_real - n_hi)
    misfit = residual > config.integrality_tolerance
    if misfit:
        log.warning("Upper slopes imply n=%.4g, residual %.3g from an integer", n_real, residual)
    return v_hi, spread, n_hi, n_real, float(residual), bool(misfit)


def identify_reserve_unknownN_instrument(outcomes, config=None):
    """
    Identify a reserve model from outcomes at several instrument values
    when bidders do not observe their number.

    The slope of the price cdf at its upper bound is
    ``gamma(z) = n / ((n - 1) (v_hi - b_hi(z)))``, so two instrument values
    with distinct ``b_hi(z)`` give ``v_hi`` and ``n``. Then
    ``q(z) = P(N = 0 | z)**(1/n)`` and ``F = q + (1 - q) F_R`` is averaged
    across ``z`` where the pieces overlap.

    :raises NotIdentifiedError: If ``b_hi(z)`` does not vary with ``z``
    :rtype: ``InstrumentIdentification``
    """
    config = config or EndogenousConfig()
    v_hi, spread, n_hi, n_real, residual, misfit = _solve_upper(outcomes, config)
    screening = {}
    pieces = []
    for outcome in outcomes:
        if outcome.p_not_sold > 0:
            q = outcome.p_not_sold ** (1.0 / n_hi)
        elif outcome.screening is not None:
            q = outcome.screening
        else:
            log.warning("z=%s: no unsold auctions, screening level not identified", outcome.z)
            continue
        screening[outcome.z] = float(q)
        points = _participant_points(outcome, n_hi, q, config.value_points)
        if points is not None:
            pieces.append((points[0], q + (1.0 - q) * points[1]))
    grid = cdf = overlap = None
    if pieces:
        grid, cdf, overlap = _stitch(pieces, config.value_points)
        log.info("Stitched the value cdf over %d instrument values, overlap gap %.3g", len(pieces), overlap)
    log.info("Reserve model: v_hi=%.6g, n_hi=%d", v_hi, n_hi)
    return InstrumentIdentification(
        v_hi, spread, n_hi, n_real, residual, misfit, screening, grid, cdf, overlap
    )


def _stitch(pieces, points):
    lo = min(float(np.min(v)) for v, _ in pieces)
    hi = max(float(np.max(v)) for v, _ in pieces)
    grid = np.linspace(lo, hi, points)
    table = np.vstack([_on_grid(grid, v, levels) for v, levels in pieces])
    defined = ~np.isnan(table)
    counts = defined.sum(axis=0)
    total = np.where(defined, table, 0.0).sum(axis=0)
    cdf = np.where(counts > 0, total / np.maximum(counts, 1), np.nan)
    gaps = np.where(defined, table, -np.inf).max(axis=0) - np.where(defined, table, np.inf).min(axis=0)
    both = counts >= 2
    overlap = float(gaps[both].max()) if both.any() else 0.0
    return grid, cdf, overlap


@dataclasses.dataclass(frozen=True, eq=False)
class EntryIdentification:
    """
    Entry thresholds, costs and conditional value cdfs by instrument value.

    ``conditional[i]`` tabulates ``F(.|signals[i])`` and ``entrant[i]``
    tabulates ``F_c(.|signals[i])`` on ``value_grid``.
    """

    n_hi: int
    n_real: float
    residual: float
    misfit: bool
    z: tuple
    s: tuple
    cost: tuple
    signal_free_assumed: bool
    signals: np.ndarray
    value_grid: np.ndarray
    conditional: np.ndarray
    entrant: np.ndarray

    def cost_curve(self):
        return {"z": np.array(self.z), "s_hat": np.array(self.s), "c_hat": np.array(self.cost)}

    def as_dict(self):
        return {
            "n_hi": self.n_hi,
            "n_real": self.n_real,
            "residual": self.residual,
            "misfit": self.misfit,
            "z": list(self.z),
            "s": list(self.s),
            "cost": list(self.cost),
            "signal_free_assumed": self.signal_free_assumed,
        }


def _entry_thresholds(outcomes, info, config):
    thresholds = {}
    counts = []
    for outcome in outcomes:
        p0, lone = outcome.p_not_sold, outcome.p_lone
        if lone > 0 and 0 < p0 and p0 + lone < 1:
            atoms = identify_reserve_unknownN_atoms(p0, lone, config)
            thresholds[outcome.z] = atoms.screening
            counts.append(atoms.n_real)
        elif info == KNOWN_N and outcome.competition is not None:
            found = identify_reserve_knownN(outcome.competition, config=config)
            thresholds[outcome.z] = found.screening
            counts.append(found.n_hi)
    missing = [o.z for o in outcomes if o.z not in thresholds]
    if missing:
        if info == KNOWN_N:
            raise NotIdentifiedError(
                f"z={missing}: neither atoms nor competition weights identify the entry threshold"
            )
        found = identify_reserve_unknownN_instrument(outcomes, config)
        for z in missing:
            if z not in found.screening:
                raise NotIdentifiedError(f"z={z}: the entry threshold is not identified")
            thresholds[z] = found.screening[z]
        counts.append(found.n_real)
    return thresholds, counts


def identify_entry(outcomes, info, config=None):
    """
    Identify an entry model from outcomes at one or more instrument values.

    Thresholds ``s(z)`` come from the not sold and lone participant
    frequencies, from binomial competition weights, or, without either, from
    the upper slopes across ``z``. ``F(v|s) = -d/ds[(1 - s) F_c(v|s)]`` is
    differenced across the identified thresholds and ``c(z)`` is the
    break-even payoff

        c = int [1 - F(v|s)] [s + (1 - s) F_c(v|s)]**(n - 1) dv

    With a single threshold ``F(.|s)`` is taken equal to ``F_c(.|s)`` and
    ``signal_free_assumed`` is set.

    :param outcomes: Outcome summaries
    :type outcomes: list of ``InstrumentedOutcome``
    :param info: ``known`` or ``unknown``

    :raises NotIdentifiedError: If a threshold or the entrant values cannot
        be recovered
    :rtype: ``EntryIdentification``
    """
    check_info(info)
    config = config or EndogenousConfig()
    thresholds, counts = _entry_thresholds(outcomes, info, config)
    n_real = float(np.mean(counts))
    n_hi = int(round(n_real))
    if n_hi < 2:
        raise NotIdentifiedError(f"outcomes imply n={n_real:.4g} potential entrants")
    residual = abs(n_real - n_hi)
    misfit = residual > config.integrality_tolerance

    pieces = {}
    for outcome in outcomes:
        points = _participant_points(outcome, n_hi, thresholds[outcome.z], config.value_points)
        if points is None:
            raise NotIdentifiedError(f"z={outcome.z}: entrant values are not identified")
        pieces[outcome.z] = points
    v_lo = min(float(np.min(v)) for v, _ in pieces.values())
    v_hi = max(float(np.max(v)) for v, _ in pieces.values())
    edges = np.unique(np.concatenate([[min(0.0, v_lo)], np.linspace(v_lo, v_hi, COST_PANELS + 1)]))
    nodes, weights = gauss_legendre(COST_ORDER)
    width = np.diff(edges)
    grid = (edges[:-1, None] + width[:, None] * nodes[None, :]).ravel()
    quad = (width[:, None] * weights[None, :]).ravel()

    signals = np.unique([thresholds[z] for z in pieces])
    entrant = np.zeros((signals.size, grid.size))
    for i, s in enumerate(signals):
        rows = [_on_grid(grid, *pieces[z], left=0.0, right=1.0) for z in pieces if thresholds[z] == s]
        entrant[i] = np.mean(rows, axis=0)
    signal_free = signals.size < 2
    if signal_free:
        log.info("A single entry threshold: using F(.|s) = F_c(.|s)")
        conditional = entrant.copy()
    else:
        scaled = (1.0 - signals[:, None]) * entrant
        conditional = np.clip(-np.gradient(scaled, signals, axis=0), 0.0, 1.0)

    zs, ss, costs = [], [], []
    for z in sorted(pieces):
        s = thresholds[z]
        i = int(np.searchsorted(signals, s))
        opponents = s + (1.0 - s) * entrant[i]
        cost = float(((1.0 - conditional[i]) * opponents ** (n_hi - 1)) @ quad)
        zs.append(float(z))
        ss.append(float(s))
        costs.append(cost)
        log.debug("z=%s: s=%.10g c=%.10g", z, s, cost)
    log.info("Entry model: n_hi=%d over %d instrument values", n_hi, len(zs))
    return EntryIdentification(
        n_hi,
        n_real,
        float(residual),
        bool(misfit),
        tuple(zs),
        tuple(ss),
        tuple(costs),
        signal_free,
        signals,
        grid,
        conditional,
        entrant,
    )


@dataclasses.dataclass(frozen=True)
class Evidence:
    """
    Outcome of one discrimination test.

    ``supports`` is a verdict or ``Inconclusive``; ``strength`` is
    ``strong``, ``weak`` or ``not_run``.
    """

    test: str
    statistic: float
    supports: str
    strength: str = "strong"
    detail: str = ""


@dataclasses.dataclass(frozen=True)
class DiscriminationReport:
    info_verdict: str
    info_evidence: tuple
    entry_verdict: str
    entry_evidence: tuple

    def as_dict(self):
        return {
            "info_verdict": self.info_verdict,
            "info_evidence": [dataclasses.asdict(e) for e in self.info_evidence],
            "entry_verdict": self.entry_verdict,
            "entry_evidence": [dataclasses.asdict(e) for e in self.entry_evidence],
        }


def _not_run(test, detail):
    return Evidence(test, float("nan"), INCONCLUSIVE, "not_run", detail)


def _verdict(evidence, first, second):
    score = {first: 0.0, second: 0.0}
    for item in evidence:
        if item.supports in score:
            score[item.supports] += 1.0 if item.strength == "strong" else 0.5
    if score[first] > score[second]:
        return first
    if score[second] > score[first]:
        return second
    return INCONCLUSIVE


def _jump_test(outcomes, config):
    counts = [o.interior_jumps for o in outcomes if o.interior_jumps is not None]
    if not counts:
        return _not_run("interior_jumps", "no jump detection available")
    most = max(counts)
    if most >= config.strong_jumps:
        return Evidence("interior_jumps", float(most), OBSERVE_N, "strong")
    if most >= 1:
        return Evidence("interior_jumps", float(most), OBSERVE_N, "weak", "a single interior jump")
    return Evidence("interior_jumps", 0.0, INCONCLUSIVE, "strong", "no interior jumps")


def _tail_test(outcomes, config):
    kappas = [o.kappa for o in outcomes if o.kappa is not None]
    if not kappas:
        return _not_run("lower_tail_exponent", "no lower tail fit available")
    kappa = float(np.median(kappas))
    if kappa < config.kappa_threshold:
        return Evidence("lower_tail_exponent", kappa, IGNORE_N, detail="density diverges at the lower bound")
    return Evidence("lower_tail_exponent", kappa, OBSERVE_N, detail="density bounded at the lower bound")


def _atom_tests(outcomes):
    share = float(np.mean([o.atom for o in outcomes]))
    at_zero = [o for o in outcomes if o.atom and o.atom_value == 0.0]
    at_lower = [o for o in outcomes if o.atom and o.atom_value != 0.0]
    if share == 0.0:
        info = Evidence("atom", 0.0, INCONCLUSIVE, detail="no atom")
        entry = Evidence("atom_location", 0.0, INCONCLUSIVE, detail="no atom")
        return info, entry
    info = Evidence("atom", share, OBSERVE_N, detail="lone participants pay a fixed price")
    if len(at_zero) >= len(at_lower):
        entry = Evidence("atom_location", len(at_zero) / len(outcomes), ENTRY, detail="atom at 0")
    else:
        entry = Evidence(
            "atom_location", len(at_lower) / len(outcomes), RESERVE, "weak", "atom at the lower bound"
        )
    return info, entry


def _support_test(outcomes, config):
    lowers = np.array([o.lower for o in outcomes])
    z = np.array([o.z for o in outcomes])
    span = max(o.upper for o in outcomes) - min(o.lower for o in outcomes)
    spread = float((lowers.max() - lowers.min()) / span) if span > 0 else 0.0
    slope = float(np.polyfit(z, lowers, 1)[0]) if np.unique(z).size > 1 else 0.0
    detail = f"slope of the lower bound in z: {slope:.6g}"
    if spread > config.support_tolerance:
        return Evidence("lower_bound_shift", spread, RESERVE, detail=detail)
    return Evidence("lower_bound_shift", spread, ENTRY, detail=detail)


def _constancy_test(outcomes, config):
    known = [o for o in outcomes if o.values is not None and o.screening is not None]
    if len(known) < 2:
        return _not_run("screened_cdf_constancy", "participant values not available")
    tables = []
    for outcome in known:
        alpha, values = _value_table(outcome.values)
        tables.append((values, outcome.screening + (1.0 - outcome.screening) * alpha))
    lo = max(float(v[0]) for v, _ in tables)
    hi = min(float(v[-1]) for v, _ in tables)
    if not hi > lo:
        return _not_run("screened_cdf_constancy", "participant value supports do not overlap")
    grid = np.linspace(lo, hi, config.value_points)
    curves = np.vstack([_on_grid(grid, v, levels) for v, levels in tables])
    gap = float(np.nanmax(curves.max(axis=0) - curves.min(axis=0)))
    if gap > config.support_tolerance:
        return Evidence("screened_cdf_constancy", gap, ENTRY, detail="(1 - q) F_X + q depends on z")
    return Evidence("screened_cdf_constancy", gap, RESERVE, detail="(1 - q) F_X + q is constant in z")


def discriminate(outcomes, config=None):
    """
    Information regime and reserve against entry cost tests.

    Information: interior density jumps, the lower tail exponent of the
    prices and atoms point to bidders observing their number. Participation:
    a lower price bound moving with ``z`` and a screened value cdf constant
    in ``z`` point to a reserve price, an atom at 0 and a fixed lower bound
    to an entry cost. Participation needs at least two instrument values.

    :rtype: ``DiscriminationReport``
    """
    config = config or EndogenousConfig()
    outcomes = list(outcomes)
    if not outcomes:
        return DiscriminationReport(INCONCLUSIVE, (), INCONCLUSIVE, ())
    atom_info, atom_entry = _atom_tests(outcomes)
    info_evidence = (_jump_test(outcomes, config), _tail_test(outcomes, config), atom_info)
    if len({o.z for o in outcomes}) < 2:
        entry_evidence = (
            atom_entry,
            _not_run("lower_bound_shift", "needs two instrument values"),
            _not_run("screened_cdf_constancy", "needs two instrument values"),
        )
        entry_verdict = INCONCLUSIVE
    else:
        entry_evidence = (atom_entry, _support_test(outcomes, config), _constancy_test(outcomes, config))
        entry_verdict = _verdict(entry_evidence, RESERVE, ENTRY)
    info_verdict = _verdict(info_evidence, OBSERVE_N, IGNORE_N)
    log.info("Discrimination: %s, %s", info_verdict, entry_verdict)
    return DiscriminationReport(info_verdict, info_evidence, entry_verdict, entry_evidence)
