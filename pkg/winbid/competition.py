# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
"""
The distribution of the number of bidders from the winning bid density.

Each jump of the winning bid density sits at the upper bid bound ``b_n``
of one component, with size ``Delta_n = n p_n theta / ((n - 1)(v_hi - b_n))``.
With ``w_n = (n - 1) Delta_n / n`` and ``S = sum w_n`` the inversion reads

    v_hi(theta) = (theta + sum w_n b_n) / S
    p_n(theta)  = w_n / S + w_n (sum w_k b_k / S - b_n) / theta
"""
import dataclasses
import logging
import math

import numpy as np

from .common import ValidationError, WinbidException
from .config import DetectionConfig, HillConfig
from .detect import detect_jumps
from .equilibrium import CompetitionPMF

log = logging.getLogger(__name__)

SUBSAMPLES = ("Low", "Medium", "High")


class SampleSizeError(WinbidException):
    """
    Raised when a sample is too small for an estimator.
    """


def _jump_arrays(jumps):
    if hasattr(jumps, "jumps"):
        pairs = [(jump.location, jump.size) for jump in jumps.jumps]
    else:
        pairs = [(float(b), float(d)) for b, d in jumps]
    if not pairs:
        raise ValidationError("competition identification needs at least one jump")
    pairs.sort()
    locations = np.array([b for b, _ in pairs], dtype=float)
    sizes = np.array([d for _, d in pairs], dtype=float)
    return locations, sizes


def _weights(locations, sizes, n_lo):
    support = np.arange(n_lo, n_lo + locations.size)
    w = (support - 1) / support * sizes
    return support, w


@dataclasses.dataclass(frozen=True)
class CompetitionEstimate:
    """
    Identified competition distribution with its validity diagnostics.

    ``diagnostics`` holds ``passed`` and a list of checks, each with a
    ``name``, a ``passed`` flag and its ``slack`` (positive when satisfied).
    """

    n_lo: int
    n_hi: int
    weights: tuple
    v_hi: float
    theta: float
    locations: tuple
    sizes: tuple
    diagnostics: dict

    @property
    def passed(self):
        return bool(self.diagnostics["passed"])

    @property
    def support(self):
        return np.arange(self.n_lo, self.n_hi + 1)

    def probability(self, n):
        if not self.n_lo <= n <= self.n_hi:
            return 0.0
        return self.weights[n - self.n_lo]

    def location(self, n):
        return self.locations[n - self.n_lo]

    def pmf(self):
        """
        :raises ValidationError: If the weights are not a distribution
        """
        return CompetitionPMF(self.n_lo, self.weights)

    def as_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(
            int(data["n_lo"]),
            int(data["n_hi"]),
            tuple(data["weights"]),
            float(data["v_hi"]),
            float(data["theta"]),
            tuple(data["locations"]),
            tuple(data["sizes"]),
            dict(data["diagnostics"]),
        )


def _check(name, slack, strict=False):
    passed = slack > 0 if strict else slack >= 0
    return {"name": name, "passed": bool(passed), "slack": float(slack)}


def identify_competition(jumps, n_lo, theta=1.0):
    """
    Invert the jump locations and sizes into ``(v_hi, p_n)``.

    The estimate is returned even when diagnostics fail; check
    ``estimate.passed``.

    :param jumps: A ``JumpSet`` or ``(location, size)`` pairs
    :param n_lo: Lowest number of active bidders
    :type n_lo: int
    :param theta: CRRA exponent
    :type theta: float

    :rtype: ``CompetitionEstimate``
    """
    if int(n_lo) != n_lo or n_lo < 2:
        raise ValidationError(f"n_lo must be an integer of at least 2, got {n_lo}")
    if not 0 < theta <= 1:
        raise ValidationError(f"theta must lie in (0, 1], got {theta}")
    n_lo = int(n_lo)
    locations, sizes = _jump_arrays(jumps)
    support, w = _weights(locations, sizes, n_lo)
    total = w.sum()
    mean = float(w @ locations) / total
    v_hi = (theta + float(w @ locations)) / total
    weights = w / total + w * (mean - locations) / theta
    n_hi = int(support[-1])

    checks = [_check(f"Delta_{n}>0", d, strict=True) for n, d in zip(support, sizes)]
    checks.append(_check("v_hi>b_hi", v_hi - locations[-1], strict=True))
    checks.append(_check("sum_w(b_hi-b_k)<=theta", theta - float(w @ (locations[-1] - locations))))
    for n, wn, bn, p in zip(support, w, locations, weights):
        checks.append(_check(f"p_{n}>=0", p))
        bound = theta * total / wn - (theta + float(w @ (locations - bn)))
        checks.append(_check(f"p_{n}<=1", bound))
    passed = all(c["passed"] for c in checks)
    diagnostics = {"passed": passed, "checks": checks}
    if not passed:
        failed = ", ".join(c["name"] for c in checks if not c["passed"])
        log.warning("Competition diagnostics failed: %s", failed or "strict inequality")
    log.info(
        "Identified n=%d..%d, v_hi=%.6g, weights=%s (theta=%g)",
        n_lo,
        n_hi,
        v_hi,
        np.array2string(weights, precision=4),
        theta,
    )
    return CompetitionEstimate(
        n_lo,
        n_hi,
        tuple(float(_) for _ in weights),
        float(v_hi),
        float(theta),
        tuple(float(_) for _ in locations),
        tuple(float(_) for _ in sizes),
        diagnostics,
    )


@dataclasses.dataclass(frozen=True)
class CrraBound:
    """
    Lower bound on the CRRA exponent implied by the jumps.

    ``lower`` is 0 and ``binding`` None when no constraint is informative.
    """

    lower: float
    binding: str
    candidates: dict

    @property
    def informative(self):
        return self.binding is not None

    def as_dict(self):
        out = dataclasses.asdict(self)
        out["informative"] = self.informative
        return out


def crra_lower_bound(jumps, n_lo):
    """
    Smallest ``theta`` for which the jumps identify a valid model.

    Each ``p_n(theta) = a_n + c_n / theta`` is affine in ``1 / theta``, so
    ``p_n <= 1``, ``p_n >= 0`` and ``v_hi(theta) > b_hi`` are each solved in
    closed form. On ties the earlier constraint in that order binds.

    :rtype: ``CrraBound``
    """
    locations, sizes = _jump_arrays(jumps)
    support, w = _weights(locations, sizes, int(n_lo))
    total = w.sum()
    mean = float(w @ locations) / total
    a = w / total
    c = w * (mean - locations)
    scale = max(1.0, float(np.max(np.abs(locations))))
    tiny = 1e-14 * scale
    candidates = {}
    for n, an, cn in zip(support, a, c):
        if cn > tiny and an < 1:
            candidates[f"p_{n}<=1"] = float(cn / (1.0 - an))
    for n, an, cn in zip(support, a, c):
        if cn < -tiny:
            candidates[f"p_{n}>=0"] = float(-cn / an)
    spread = float(w @ (locations[-1] - locations))
    if spread > tiny:
        candidates["v_hi>b_hi"] = spread
    lower, binding = 0.0, None
    for name, value in candidates.items():
        if value > lower + 1e-12 * max(1.0, value):
            lower, binding = value, name
    if binding is None:
        log.info("No informative constraint on theta")
    else:
        log.info("theta >= %.6g from %s", lower, binding)
    return CrraBound(lower, binding, candidates)


@dataclasses.dataclass(frozen=True, eq=False)
class HillResult:
    """
    Hill trace over top order counts ``m`` and the rounded lowest number of
    bidders.
    """

    m: np.ndarray
    n_tilde: np.ndarray
    rounded: np.ndarray
    n_lower: int

    def trace_table(self):
        return {"M": self.m, "n_tilde": self.n_tilde}


def round_hill(n_tilde):
    """
    The integer ``k`` with ``k - 1/2 < n_tilde <= k + 1/2``.
    """
    return np.ceil(np.asarray(n_tilde, dtype=float) - 0.5).astype(int)


def _cell_lower_bounds(covariates, bids, cells):
    """
    Lowest bid within covariate quantile cells, the global minimum for
    cells with fewer than 2 auctions.
    """
    codes = np.zeros(covariates.shape[0], dtype=int)
    for j in range(covariates.shape[1]):
        edges = np.quantile(covariates[:, j], np.linspace(0, 1, cells + 1)[1:-1])
        codes = codes * cells + np.searchsorted(edges, covariates[:, j], side="left")
    row_min = np.nanmin(np.where(np.isnan(bids), np.inf, bids), axis=1)
    overall = float(np.min(row_min))
    lower = np.full(codes.size, overall)
    fallback = 0
    for code in np.unique(codes):
        rows = codes == code
        if rows.sum() < 2:
            fallback += 1
            continue
        lower[rows] = np.min(row_min[rows])
    if fallback:
        log.warning("%d covariate cells have fewer than 2 auctions, using the global minimum", fallback)
    return lower


def normalized_bids(sample, config=None):
    """
    ``W_dag = (W / v_lo) / min(W / v_lo) - 1`` for competitive sales.

    ``v_lo`` is constant unless ``config.use_covariates``, in which case it
    is the lowest individual bid of the auction's covariate cell.
    """
    config = config or HillConfig()
    keep = sample.sold & ~sample.atom
    prices = sample.price[keep]
    if config.use_covariates:
        if sample.covariates is None or sample.bids is None:
            raise ValidationError("hill.use_covariates needs x1, x2 and b1..bk columns")
        lower = _cell_lower_bounds(sample.covariates[keep], sample.bids[keep], config.cells)
    else:
        lower = np.ones(prices.size)
    ratio = prices / lower
    smallest = float(np.min(ratio)) if ratio.size else 0.0
    if not smallest > 0:
        raise SampleSizeError("normalized bids need a positive minimum")
    return ratio / smallest - 1.0


def hill_trace(normalized, m_values, literal=False):
    """
    ``1 / n_tilde = ln W_(M) - mean(ln W_(m), m = 2..M)`` over ascending
    order statistics, ``W_(1) = 0`` excluded.

    With ``literal`` the mean is taken over the values themselves.
    """
    positive = np.sort(normalized[normalized > 0])
    m_values = np.asarray(m_values, dtype=int)
    if positive.size == 0 or m_values.max() - 1 > positive.size:
        raise SampleSizeError(
            f"Hill estimator needs {int(m_values.max()) - 1} positive normalized bids, "
            f"got {positive.size}"
        )
    terms = positive if literal else np.log(positive)
    running = np.cumsum(terms)
    top = np.log(positive[m_values - 2])
    inverse = top - running[m_values - 2] / (m_values - 1)
    with np.errstate(divide="ignore"):
        n_tilde = np.where(inverse > 0, 1.0 / inverse, np.nan)
    return n_tilde


def default_m_range(size):
    return (max(2, math.ceil(0.1 * size)), max(2, math.ceil(0.3 * size)))


def hill_n_lower(sample, config=None):
    """
    Estimate the lowest number of bidders from the lower tail of the
    winning bids.

    :param sample: Outcomes
    :type sample: ``winbid.outcomes.OutcomeSample``
    :param config: Hill parameters
    :type config: ``winbid.config.HillConfig``

    :raises SampleSizeError: If too few positive normalized bids remain
    :rtype: ``HillResult``
    """
    config = config or HillConfig()
    normalized = normalized_bids(sample, config)
    low, high = config.m_range or default_m_range(normalized.size)
    if high > normalized.size:
        raise SampleSizeError(f"M={high} exceeds the {normalized.size} competitive sales")
    m_values = np.arange(low, high + 1)
    n_tilde = hill_trace(normalized, m_values, config.literal)
    valid = np.isfinite(n_tilde)
    if not valid.any():
        raise SampleSizeError("the Hill trace has zero log spread for every M")
    rounded = round_hill(np.where(valid, n_tilde, 0.0))
    values, counts = np.unique(rounded[valid], return_counts=True)
    modal = int(values[np.argmax(counts)])
    if modal < 2:
        log.warning("Hill estimate rounds to %d, using 2", modal)
    n_lower = max(2, modal)
    log.info("Hill estimate n_lo=%d over M=%d..%d", n_lower, low, high)
    return HillResult(m_values, n_tilde, rounded, n_lower)


def subsample_split(sample):
    """
    Low, Medium and High covariate subsamples.

    Low has both covariates at or below their medians, High both above, and
    Medium both within their interquartile ranges. Subsamples may overlap.

    :rtype: dict
    """
    x = sample.covariates
    if x is None:
        raise ValidationError("subsample split needs covariates x1 and x2")
    q25, median, q75 = np.quantile(x, [0.25, 0.5, 0.75], axis=0)
    masks = {
        "Low": np.all(x <= median, axis=1),
        "Medium": np.all((x >= q25) & (x <= q75), axis=1),
        "High": np.all(x > median, axis=1),
    }
    for label in SUBSAMPLES:
        log.debug("Subsample %s holds %d auctions", label, int(masks[label].sum()))
    return {label: sample.subset(masks[label]) for label in SUBSAMPLES}


def bid_count_split(sample, counts):
    """
    Subsamples of auctions with exactly ``count`` submitted bids, labelled
    ``"<count> bids"``.

    :rtype: dict
    """
    parts = {}
    for count in counts:
        part = sample.with_bid_count(count)
        log.debug("Bid count %d holds %d auctions", count, len(part))
        parts[f"{int(count)} bids"] = part
    return parts


def _identify_part(label, part, n_lo, theta, detection, hill):
    try:
        if hill is not None:
            n_lo = hill_n_lower(part, hill).n_lower
        jumps = detect_jumps(part.competitive_prices(), detection)
        return identify_competition(jumps, n_lo, theta)
    except WinbidException as exc:
        log.warning("Subsample %s not identified: %s", label, exc)
        return str(exc)


def identify_by_subsample(sample, n_lo, theta=1.0, detection=None, bid_counts=(), hill=None):
    """
    Run detection and identification within each covariate subsample and
    within each bid-count subsample.

    Covariate subsamples are skipped when there are no covariates and
    ``bid_counts`` is given. Bid-count subsamples re-estimate the lowest
    number of bidders with ``hill`` when it is given, else they use ``n_lo``.

    :param bid_counts: Numbers of submitted bids to restrict to
    :type bid_counts: tuple
    :param hill: Hill parameters for the bid-count subsamples
    :type hill: ``winbid.config.HillConfig``

    :return: Label to estimate, or to the error message when a subsample
        cannot be identified
    :rtype: dict
    """
    detection = detection or DetectionConfig()
    out = {}
    if sample.covariates is not None or not bid_counts:
        for label, part in subsample_split(sample).items():
            out[label] = _identify_part(label, part, n_lo, theta, detection, None)
    for label, part in bid_count_split(sample, bid_counts).items():
        out[label] = _identify_part(label, part, n_lo, theta, detection, hill)
    return out
