# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
"""
The ``winbid recover`` command and value recovery.

The top component is peeled off the winning bid distribution one bid
interval at a time. On ``[b_{n-1}, b_n]`` (``n`` the largest number of
bidders) only the top component is still increasing, so

    G_n(b) = ((G(b) - 1 + p_n) / p_n) ** (1 / n)

and the equilibrium condition gives ``V = b + theta G_n / ((n - 1) g_n)``.
The lower components then follow on the recovered quantile range from

    B_m(a) = k a**-k (b_m / k - int_a^1 t**(k - 1) V(t) dt),  k = (m - 1) / theta

which extends the range where every ``G_m`` is known down to
``B_{n-1}(alpha_1)``, and so on.

Every interval is parameterized by the bid ``b`` and tabulated on
Chebyshev-Lobatto panels; integrals in ``t`` become integrals in ``b``
through ``dt = g_n(b) db``.
"""
import dataclasses
import json
import logging
import pathlib

import numpy as np
from numpy.polynomial import Chebyshev
from scipy.interpolate import PchipInterpolator
from scipy.optimize import isotonic_regression

from . import config as configuration
from .common import (
    DiagnosticsFailure,
    ValidationError,
    WinbidException,
    output_dir,
    write_json,
    write_run_manifest,
    write_table,
)
from .competition import (
    CompetitionEstimate,
    SampleSizeError,
    crra_lower_bound,
    hill_n_lower,
    identify_competition,
)
from .config import RecoveryConfig, RunConfig
from .detect import detect_jumps
from .numeric import EmpiricalDistribution
from .outcomes import ingest_csv

log = logging.getLogger(__name__)

NEGATIVE_TOLERANCE = 1e-3
GRADING_RATIO = 0.5
GRADED_PANELS = 30
SEGMENT_PANELS = 2
BISECTION_STEPS = 60
# Queries this close outside the table snap to its ends
EDGE_SLACK = 1e-12


class InconsistentInputsError(WinbidException):
    """
    Raised when the winning bid distribution and the competition estimate
    cannot come from one model.
    """


def lobatto_nodes(lo, hi, count):
    """
    Chebyshev-Lobatto nodes on ``[lo, hi]`` in increasing order.
    """
    return lo + (hi - lo) * 0.5 * (1.0 - np.cos(np.pi * np.arange(count) / (count - 1)))


@dataclasses.dataclass
class _Panel:
    lo: float
    hi: float
    b: np.ndarray
    alpha: np.ndarray
    values: np.ndarray
    bids: dict
    fits: dict = dataclasses.field(default_factory=dict)

    def fit(self):
        domain = [self.lo, self.hi]
        degree = self.b.size - 1
        self.fits["alpha"] = Chebyshev.fit(self.b, self.alpha, degree, domain=domain)
        self.fits["value"] = Chebyshev.fit(self.b, self.values, degree, domain=domain)
        for n, bids in self.bids.items():
            self.fits[n] = Chebyshev.fit(self.b, bids, degree, domain=domain)


@dataclasses.dataclass(frozen=True, eq=False)
class RecoveredValue:
    """
    Recovered value and bid quantiles on ``[alpha[0], 1]``.

    ``bids`` maps each number of bidders to its bid quantile on ``alpha``.
    ``top_cdf`` tabulates ``G_n`` of the largest component as ``(b, alpha)``.
    """

    alpha: np.ndarray
    values: np.ndarray
    bids: dict
    alpha_seq: tuple
    beta_seq: tuple
    iterations: int
    stop_reason: str
    top_cdf: tuple
    clipped: int = 0

    @property
    def alpha_lo(self):
        return float(self.alpha[0])

    def _query(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        lo, hi = self.alpha[0], self.alpha[-1]
        alpha = np.where((alpha < lo) & (alpha >= lo - EDGE_SLACK), lo, alpha)
        return np.where((alpha > hi) & (alpha <= hi + EDGE_SLACK), hi, alpha)

    def __call__(self, alpha):
        spline = PchipInterpolator(self.alpha, self.values, extrapolate=False)
        return spline(self._query(alpha))

    def bid(self, n, alpha):
        spline = PchipInterpolator(self.alpha, self.bids[n], extrapolate=False)
        return spline(self._query(alpha))

    def to_frame(self):
        frame = {"alpha": self.alpha, "V_hat": self.values}
        for n in sorted(self.bids):
            frame[f"B_hat_{n}"] = self.bids[n]
        return frame

    def trace(self):
        return {
            "alpha_seq": list(self.alpha_seq),
            "beta_seq": list(self.beta_seq),
            "iterations": self.iterations,
            "stop_reason": self.stop_reason,
            "alpha_lo": self.alpha_lo,
            "clipped": self.clipped,
        }


class _Recovery:
    """
    State of the expanding interval recovery.
    """

    def __init__(self, cdf, pdf, estimate, lower, config):
        if not estimate.passed:
            raise InconsistentInputsError("the competition estimate failed its diagnostics")
        self.cdf = cdf
        self.pdf = pdf
        self.config = config
        self.theta = estimate.theta
        self.n_top = estimate.n_hi
        self.lower_ns = [int(n) for n in estimate.support[:-1]]
        self.p = {int(n): estimate.probability(n) for n in estimate.support}
        self.b_top = {int(n): estimate.location(n) for n in estimate.support}
        self.k = {n: (n - 1) / self.theta for n in self.b_top}
        self.lower = lower
        self.panels = []
        self.integrals = {n: 0.0 for n in self.lower_ns}
        self.clipped = 0
        self.rearranged = config.rearrange

    def _component(self, n, b):
        """
        ``G_n`` and ``g_n`` of a lower component from its recovered bids.
        """
        level = np.ones(b.shape)
        density = np.zeros(b.shape)
        below = b < self.b_top[n]
        if not below.any():
            return level, density
        target = b[below]
        lows = np.array([panel.bids[n][0] for panel in self.panels])
        highs = np.array([panel.bids[n][-1] for panel in self.panels])
        floor = float(lows.min())
        short = target < floor
        if short.any():
            self.clipped += int(short.sum())
            target = np.maximum(target, floor)
        which = np.array(
            [int(np.flatnonzero((lows <= t) & (t <= highs))[0]) if np.any((lows <= t) & (t <= highs))
             else int(np.argmin(lows)) for t in target]
        )
        param = np.empty(target.size)
        value = np.empty(target.size)
        alpha = np.empty(target.size)
        for idx in np.unique(which):
            rows = which == idx
            panel = self.panels[idx]
            fit = panel.fits[n]
            lo = np.full(rows.sum(), panel.lo)
            hi = np.full(rows.sum(), panel.hi)
            goal = target[rows]
            for _ in range(BISECTION_STEPS):
                mid = 0.5 * (lo + hi)
                up = fit(mid) > goal
                hi = np.where(up, mid, hi)
                lo = np.where(up, lo, mid)
            param[rows] = 0.5 * (lo + hi)
            alpha[rows] = np.clip(panel.fits["alpha"](param[rows]), 0.0, 1.0)
            value[rows] = panel.fits["value"](param[rows])
        level[below] = alpha
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = alpha / (self.k[n] * (value - target))
        density[below] = np.where(np.isfinite(slope) & (slope > 0), slope, 0.0)
        return level, density

    def _panel(self, lo, hi):
        b = lobatto_nodes(lo, hi, self.config.nodes)
        n_top, theta = self.n_top, self.theta
        shrink = 1e-10 * (hi - lo)
        # Densities are one-sided at the panel ends, the lower components
        # included: at b = b_n the density of G still carries G_n.
        inner = np.clip(b, lo + shrink, hi - shrink)
        level = np.asarray(self.cdf(b), dtype=float)
        density = np.asarray(self.pdf(inner), dtype=float)
        residual = level.copy()
        residual_density = density.copy()
        for n in self.lower_ns:
            G_n, g_n = self._component(n, inner)
            residual -= self.p[n] * G_n ** n
            residual_density -= self.p[n] * n * G_n ** (n - 1) * g_n
        phi = residual / self.p[n_top]
        if phi.min() < -NEGATIVE_TOLERANCE:
            at = b[int(np.argmin(phi))]
            raise InconsistentInputsError(
                f"G leaves {phi.min():.3g} for the top component at b={at:.6g}, "
                f"below the tolerance {-NEGATIVE_TOLERANCE}"
            )
        clipped = int(np.sum((phi < 0) | (phi > 1)))
        if clipped:
            self.clipped += clipped
        alpha = np.clip(phi, 0.0, 1.0) ** (1.0 / n_top)
        with np.errstate(divide="ignore", invalid="ignore"):
            g_top = residual_density / (self.p[n_top] * n_top * alpha ** (n_top - 1))
        scale = np.nanmax(np.abs(g_top[np.isfinite(g_top)])) if np.isfinite(g_top).any() else 1.0
        g_top = np.where(np.isfinite(g_top) & (g_top > 1e-12 * scale), g_top, 1e-12 * scale)
        values = b + theta * alpha / ((n_top - 1) * g_top)
        if self.rearranged:
            values = isotonic_regression(values, increasing=True).x
            if self.panels:
                values = np.minimum(values, min(panel.values[0] for panel in self.panels))
        bids = {n_top: b.copy()}
        integrand = {}
        for n in self.lower_ns:
            k = self.k[n]
            integrand[n] = alpha ** (k - 1.0) * values * g_top
        for n in self.lower_ns:
            k = self.k[n]
            antiderivative = Chebyshev.fit(b, integrand[n], b.size - 1, domain=[lo, hi]).integ()
            partial = self.integrals[n] + antiderivative(hi) - antiderivative(b)
            with np.errstate(divide="ignore", invalid="ignore"):
                bids[n] = k * alpha ** (-k) * (self.b_top[n] / k - partial)
            bids[n] = np.where(alpha > 0, bids[n], self.lower if self.lower is not None else b)
            self.integrals[n] += float(antiderivative(hi) - antiderivative(lo))
        panel = _Panel(lo, hi, b, alpha, values, bids)
        panel.fit()
        return panel

    def segment(self, lo, hi, graded):
        """
        Recover the top component on ``[lo, hi]``.

        :return: ``alpha`` at ``lo``
        """
        cuts = sorted({lo, hi} | {self.b_top[n] for n in self.lower_ns if lo < self.b_top[n] < hi})
        pieces = list(zip(cuts[:-1], cuts[1:]))
        edges = []
        for index, (a, b) in enumerate(pieces):
            if graded and index == 0:
                steps = a + (b - a) * GRADING_RATIO ** np.arange(GRADED_PANELS, -1, -1)
                edges.extend(zip(steps[:-1], steps[1:]))
            else:
                steps = np.linspace(a, b, SEGMENT_PANELS + 1)
                edges.extend(zip(steps[:-1], steps[1:]))
        new = []
        for a, b in reversed(edges):
            panel = self._panel(a, b)
            self.panels.append(panel)
            new.append(panel)
        return float(new[-1].alpha[0]), float(new[-1].bids.get(self.n_top - 1, new[-1].b)[0])

    def result(self, alpha_seq, beta_seq, iterations, reason):
        alpha = np.concatenate([panel.alpha for panel in self.panels])
        values = np.concatenate([panel.values for panel in self.panels])
        bids = {
            n: np.concatenate([panel.bids[n] for panel in self.panels])
            for n in [*self.lower_ns, self.n_top]
        }
        order = np.argsort(alpha, kind="stable")
        alpha = alpha[order]
        keep = np.concatenate([[True], np.diff(alpha) > 0]) & (alpha > 0)
        alpha = alpha[keep]
        values = values[order][keep]
        bids = {n: bid[order][keep] for n, bid in bids.items()}
        if self.clipped:
            log.warning("Clipped %d recovery arguments to their valid range", self.clipped)
        return RecoveredValue(
            alpha,
            values,
            bids,
            tuple(alpha_seq),
            tuple(beta_seq),
            iterations,
            reason,
            (bids[self.n_top].copy(), alpha.copy()),
            self.clipped,
        )


def _recover(cdf, pdf, estimate, lower, config, max_iter):
    config = config or RecoveryConfig()
    state = _Recovery(cdf, pdf, estimate, lower, config)
    top = state.b_top[state.n_top]
    if not state.lower_ns:
        if lower is None:
            raise ValidationError("single component recovery needs the lower bound of the bids")
        alpha, _ = state.segment(lower, top, graded=True)
        log.info("Single component recovered down to alpha=%.3g", alpha)
        return state.result([alpha], [lower], 1, "support")

    alpha_seq, beta_seq = [], []
    hi, lo = top, state.b_top[state.n_top - 1]
    iterations = 0
    reason = "max_iter"
    while True:
        graded = lower is not None and lo <= lower
        try:
            alpha, beta = state.segment(max(lo, lower) if graded else lo, hi, graded)
        except InconsistentInputsError:
            if iterations == 0:
                raise
            log.warning("Stopping after %d iterations: inputs inconsistent below alpha=%.4g",
                        iterations, alpha_seq[-1])
            reason = "inconsistent"
            break
        iterations += 1
        alpha_seq.append(alpha)
        beta_seq.append(beta)
        log.debug("Iteration %d: alpha=%.10g beta=%.10g", iterations, alpha, beta)
        if graded:
            reason = "support"
            break
        if alpha < config.alpha_min:
            reason = "alpha_min"
            break
        if len(alpha_seq) > 1 and alpha_seq[-2] - alpha <= config.stall:
            reason = "stalled"
            log.warning("Recovery stalled at alpha=%.6g", alpha)
            break
        if iterations >= max_iter:
            break
        hi, lo = lo, beta
    log.info("Recovered values down to alpha=%.4g after %d iterations (%s)", alpha_seq[-1], iterations, reason)
    return state.result(alpha_seq, beta_seq, iterations, reason)


def top_component(cdf, pdf, estimate, lower=None, config=None):
    """
    First recovery step on ``[b_{n-1}, b_n]``.

    :param cdf: Winning bid cdf
    :type cdf: callable
    :param pdf: Winning bid density
    :type pdf: callable
    :param estimate: Identified competition
    :type estimate: ``winbid.competition.CompetitionEstimate``
    :param lower: Lower bound of the bids, needed for a single component

    :return: Values and bids on ``[alpha_1, 1]``; ``alpha_seq[0]`` is
        ``alpha_1`` and ``beta_seq[0]`` is ``B_{n-1}(alpha_1)``
    :rtype: ``RecoveredValue``
    """
    return _recover(cdf, pdf, estimate, lower, config, 1)


def iterate_recovery(cdf, pdf, estimate, lower=None, config=None):
    """
    Recover the value quantile by expanding intervals.

    Stops when ``alpha`` falls below ``config.alpha_min``, after
    ``config.max_iter`` iterations, when ``alpha`` stops decreasing by more
    than ``config.stall``, or when the bids reach ``lower``.

    :raises InconsistentInputsError: If the first step finds ``G`` below
        ``1 - p_n`` beyond tolerance
    :rtype: ``RecoveredValue``
    """
    config = config or RecoveryConfig()
    return _recover(cdf, pdf, estimate, lower, config, config.max_iter)


@dataclasses.dataclass(frozen=True, eq=False)
class PipelineResult:
    jumps: object
    hill: object
    estimate: CompetitionEstimate
    bound: object
    recovered: object
    distribution: EmpiricalDistribution

    def competition_report(self, subsamples=None):
        """
        Content of ``competition.json``, readable by
        ``CompetitionEstimate.from_dict``.
        """
        report = self.estimate.as_dict()
        report["v_hi_hat"] = self.estimate.v_hi
        report["theta_bound"] = self.bound.as_dict()
        report["n_lo_source"] = "hill" if self.hill is not None else "config"
        if subsamples is not None:
            report["subsamples"] = {
                label: value.as_dict() if isinstance(value, CompetitionEstimate) else {"error": value}
                for label, value in subsamples.items()
            }
        return report


def empirical_pipeline(sample, run=None, strict=True):
    """
    Detection, competition identification and value recovery from outcomes.

    :param sample: Outcomes
    :type sample: ``winbid.outcomes.OutcomeSample``
    :param run: Run configuration
    :type run: ``winbid.config.RunConfig``
    :param strict: Raise ``DiagnosticsFailure`` when the competition
        diagnostics fail; otherwise return without recovered values

    :rtype: ``PipelineResult``
    """
    run = run or RunConfig()
    prices = sample.competitive_prices()
    if prices.size < run.recovery.min_sample:
        raise SampleSizeError(
            f"recovery needs at least {run.recovery.min_sample} competitive sales, got {prices.size}"
        )
    jumps = detect_jumps(prices, run.detect)
    hill = None
    n_lo = run.competition.n_lo
    if n_lo is None:
        hill = hill_n_lower(sample, run.hill)
        n_lo = hill.n_lower
    estimate = identify_competition(jumps, n_lo, run.competition.theta)
    bound = crra_lower_bound(jumps, n_lo)
    distribution = EmpiricalDistribution(prices, run.recovery.points)
    if not estimate.passed:
        if strict:
            raise DiagnosticsFailure("competition diagnostics failed", estimate.diagnostics)
        return PipelineResult(jumps, hill, estimate, bound, None, distribution)
    recovered = iterate_recovery(
        distribution.cdf, distribution.pdf, estimate, distribution.lower, run.recovery
    )
    return PipelineResult(jumps, hill, estimate, bound, recovered, distribution)


def write_recovery(out, recovered):
    """
    Write ``value_quantile.csv`` and ``recovery_trace.json``.
    """
    return [
        write_table(out / "value_quantile.csv", recovered.to_frame()),
        write_json(out / "recovery_trace.json", recovered.trace()),
    ]


def setup_parser(subparsers):
    """
    Setup the subparser for the ``recover`` command.

    :param subparsers: The subparsers object returned from ``add_subparsers``
    :type subparsers: argparse._SubParsersAction
    """
    subparser = subparsers.add_parser(
        "recover",
        description=(
            "Recover the private value quantile function from winning bids. "
            "Reuses a competition.json from a previous estimate when given."
        ),
    )
    subparser.set_defaults(func=main)
    subparser.add_argument("--input", required=True, help="Outcome CSV")
    subparser.add_argument("--config", default=None, help="TOML run file")
    subparser.add_argument("--competition", default=None, help="competition.json to reuse")
    subparser.add_argument(
        "--out-dir", default="winbid-out", help="Output directory [default: %(default)s]"
    )
    subparser.add_argument("--alpha-min", type=float, default=None, help="Stop below this alpha")
    subparser.add_argument("--theta", type=float, default=None, help="CRRA exponent")
    subparser.add_argument("--n-lo", type=int, default=None, help="Lowest number of bidders")


def main(args):
    """
    The entrypoint to the ``recover`` command.

    :param args: The arguments to the command
    :type args: ``argparse.Namespace``
    """
    run = configuration.apply_overrides(configuration.load_config(args.config), args)
    sample = ingest_csv(args.input)
    out = output_dir(args.out_dir)
    if args.competition:
        data = json.loads(pathlib.Path(args.competition).read_text())
        estimate = CompetitionEstimate.from_dict(data)
        if not estimate.passed:
            raise DiagnosticsFailure("the supplied competition estimate failed its diagnostics",
                                     estimate.diagnostics)
        distribution = EmpiricalDistribution(sample.competitive_prices(), run.recovery.points)
        recovered = iterate_recovery(
            distribution.cdf, distribution.pdf, estimate, distribution.lower, run.recovery
        )
    else:
        recovered = empirical_pipeline(sample, run).recovered
    written = write_recovery(out, recovered)
    write_run_manifest(out, "recover", run.as_dict(), run.seed, written)
    print(f"Recovered values on [{recovered.alpha_lo:.4g}, 1], wrote {out}")
