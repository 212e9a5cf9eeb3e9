# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
"""
The ``winbid detect`` command and the density jump detector.

Ranks are 1-based throughout: ``W[l - 1]`` is the ``l``-th order statistic
of a sample of size ``L``. A window fraction ``h`` spans ``k = round(h L / 2)``
order statistics on each side, at least one.
"""
import dataclasses
import logging
import math

import numpy as np
from scipy import integrate

from . import config as configuration
from .common import (
    ValidationError,
    WinbidException,
    output_dir,
    write_run_manifest,
    write_table,
)
from .config import DetectionConfig
from .outcomes import ingest_csv

log = logging.getLogger(__name__)

MIN_SAMPLE = 20


class DegenerateWindowError(WinbidException):
    """
    Raised when the order statistics of a window coincide.
    """


def window_size(h, size):
    """
    ``k = round(h L / 2)``, at least 1.
    """
    return max(1, int(round(h * size / 2.0)))


def _sorted(sample):
    sample = np.asarray(sample, dtype=float)
    if sample.ndim != 1 or not np.all(np.isfinite(sample)):
        raise ValidationError("the detector needs a finite univariate sample")
    return np.sort(sample, kind="stable")


def knn_density(W, index, h):
    """
    Two sided k-NN density estimate at the order statistic ``index``.

    The window ``[index - k, index + k]`` is truncated to ``[1, L]``.

    :param W: Sorted sample
    :type W: ``numpy.ndarray``
    :param index: 1-based rank
    :type index: int
    :param h: Window fraction
    :type h: float

    :raises DegenerateWindowError: If the window has no spread
    """
    size = W.size
    if size < 4:
        raise ValidationError(f"k-NN density needs at least 4 observations, got {size}")
    if not 1 <= index <= size:
        raise ValidationError(f"rank {index} outside 1..{size}")
    k = window_size(h, size)
    lo = max(index - k, 1)
    hi = min(index + k, size)
    spread = W[hi - 1] - W[lo - 1]
    if spread <= 0:
        raise DegenerateWindowError(f"zero spacing in the window around rank {index}")
    return (hi - lo) / (size * spread)


def _one_sided(W, h):
    """
    Left and right k-NN estimates at every rank.

    A side whose truncated window holds fewer than ``k`` spacings lies beyond
    the sample support and is set to 0. Zero spacings give NaN.
    """
    size = W.size
    k = window_size(h, size)
    ranks = np.arange(1, size + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = np.maximum(ranks - k, 1)
        left = (ranks - lo) / (size * (W - W[lo - 1]))
        hi = np.minimum(ranks + k, size)
        right = (hi - ranks) / (size * (W[hi - 1] - W))
    left = np.where(ranks - 1 < k, 0.0, left)
    right = np.where(size - ranks < k, 0.0, right)
    left[~np.isfinite(left)] = np.nan
    right[~np.isfinite(right)] = np.nan
    return left, right


def _two_sided(W, h):
    size = W.size
    k = window_size(h, size)
    ranks = np.arange(1, size + 1)
    lo = np.maximum(ranks - k, 1)
    hi = np.minimum(ranks + k, size)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (hi - lo) / (size * (W[hi - 1] - W[lo - 1]))
    out[~np.isfinite(out)] = np.nan
    return out


def tentative_jump(W, index, h0):
    """
    Left minus right k-NN density at the order statistic ``index``.

    Positive values point at a downward jump of the density.
    """
    size = W.size
    if not 1 <= index <= size:
        raise ValidationError(f"rank {index} outside 1..{size}")
    left, right = _one_sided(W, h0)
    value = left[index - 1] - right[index - 1]
    if np.isnan(value):
        raise DegenerateWindowError(f"zero spacing in the window around rank {index}")
    return float(value)


def critical_factor(h0, epsilon):
    """
    ``c(eps; h0) = sqrt(ln(1/h0)) + (ln ln(1/h0) - ln(pi) + 2 eps) / (2 sqrt(ln(1/h0)))``.

    :raises ValidationError: If ``h0 >= 1/e``
    """
    if not 0 < h0 < math.exp(-1):
        raise ValidationError(f"h0 must lie in (0, 1/e) for the critical value, got {h0}")
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    root = math.sqrt(math.log(1.0 / h0))
    return root + (math.log(math.log(1.0 / h0)) - math.log(math.pi) + 2.0 * epsilon) / (2.0 * root)


def critical_value(density, h0, epsilon):
    """
    Threshold ``C = g_hat * c(eps; h0)`` for a tentative jump.
    """
    return density * critical_factor(h0, epsilon)


@dataclasses.dataclass(frozen=True)
class Jump:
    location: float
    size: float
    index: int
    edge: bool = False


@dataclasses.dataclass(frozen=True, eq=False)
class JumpSet:
    """
    Detected jumps and the density estimate that allows for them.

    ``density_b``, ``density_g`` and ``segment`` tabulate the estimate;
    it is linear between tabulated points of one segment.
    """

    jumps: tuple
    density_b: np.ndarray
    density_g: np.ndarray
    segment: np.ndarray
    sample_size: int
    skipped: int = 0

    def __len__(self):
        return len(self.jumps)

    @property
    def locations(self):
        return np.array([jump.location for jump in self.jumps])

    @property
    def sizes(self):
        return np.array([jump.size for jump in self.jumps])

    @property
    def interior(self):
        return tuple(jump for jump in self.jumps if not jump.edge)

    def density(self, b):
        """
        Evaluate the estimate, 0 outside the tabulated segments.
        """
        b = np.asarray(b, dtype=float)
        out = np.zeros(b.shape)
        for seg in np.unique(self.segment):
            rows = self.segment == seg
            x, y = self.density_b[rows], self.density_g[rows]
            inside = (b >= x[0]) & (b <= x[-1])
            out = np.where(inside, np.interp(b, x, y), out)
        return out

    def integral(self):
        """
        Trapezoid integral of the estimate over its segments.
        """
        total = 0.0
        for seg in np.unique(self.segment):
            rows = self.segment == seg
            total += float(integrate.trapezoid(self.density_g[rows], self.density_b[rows]))
        return total

    def jump_table(self):
        return {
            "location": self.locations,
            "size": self.sizes,
            "index": np.array([jump.index for jump in self.jumps], dtype=int),
            "edge_flag": np.array([int(jump.edge) for jump in self.jumps], dtype=int),
        }

    def density_table(self):
        return {"b": self.density_b, "g_hat": self.density_g, "segment_id": self.segment}


def _measure(W, index, k0, config, edge):
    """
    Location and size of a jump found at ``index``.
    """
    size = W.size
    h_size = config.h_size or config.h0
    left, right = _one_sided(W, h_size)
    if edge:
        return index, float(W[index - 1]), float(left[index - 1])
    delta = left - right
    if config.h_size is None:
        return index, float(W[index - 1]), float(delta[index - 1])
    lo = max(index - k0, 1)
    hi = min(index + k0, size - 1)
    window = delta[lo - 1:hi]
    if np.all(np.isnan(window)):
        return index, float(W[index - 1]), float(delta[index - 1])
    best = lo + int(np.nanargmax(window))
    return best, float(W[best - 1]), float(delta[best - 1])


def discontinuous_density(W, boundaries, h1, points=512):
    """
    k-NN density with windows truncated at the segment boundaries.

    :param W: Sorted sample
    :param boundaries: Increasing 1-based ranks ending each segment but
        the last
    :param h1: Smoothing fraction
    :param points: Evaluation points spread over the sample

    :return: ``(b, g, segment_id)`` arrays
    """
    size = W.size
    k1 = window_size(h1, size)
    ends = [int(_) for _ in boundaries if 1 <= _ < size] + [size]
    starts = [1] + [end + 1 for end in ends[:-1]]
    xs, gs, ids = [], [], []
    for seg, (start, end) in enumerate(zip(starts, ends)):
        if end - start < 1:
            continue
        count = max(2, int(round(points * (end - start + 1) / size)))
        ranks = np.unique(np.linspace(start, end, min(count, end - start + 1)).round().astype(int))
        lo = np.maximum(ranks - k1, start)
        hi = np.minimum(ranks + k1, end)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = (hi - lo) / (size * (W[hi - 1] - W[lo - 1]))
        ok = np.isfinite(g)
        xs.append(W[ranks[ok] - 1])
        gs.append(g[ok])
        ids.append(np.full(int(ok.sum()), seg, dtype=int))
    if not xs:
        return np.array([]), np.array([]), np.array([], dtype=int)
    return np.concatenate(xs), np.concatenate(gs), np.concatenate(ids)


def detect_jumps(sample, config=None):
    """
    Find the discontinuities of the density of a sample.

    The rank maximizing the tentative jump is taken while it exceeds its
    critical value; ranks within ``k0`` of a detected jump are excluded from
    later rounds.

    :param sample: Observations, in any order
    :type sample: array_like
    :param config: Detector parameters
    :type config: ``winbid.config.DetectionConfig``

    :rtype: ``JumpSet``
    """
    config = config or DetectionConfig()
    W = _sorted(sample)
    size = W.size
    if size < MIN_SAMPLE:
        raise ValidationError(f"jump detection needs at least {MIN_SAMPLE} observations, got {size}")
    k0 = window_size(config.h0, size)
    left, right = _one_sided(W, config.h0)
    delta = left - right
    g_hat = _two_sided(W, config.h0)
    degenerate = np.isnan(delta) | np.isnan(g_hat)
    skipped = int(degenerate.sum())
    if skipped:
        log.warning("Skipped %d ranks with zero spacing windows", skipped)

    eligible = ~degenerate
    ranks = np.arange(1, size + 1)
    # The density is 0 beyond the sample maximum, so the two-sided level of
    # an upper edge rank, the harmonic mean of its one-sided levels, is 0.
    level = np.where(ranks > size - k0, 0.0, g_hat)
    jumps = []
    while len(jumps) < config.max_jumps and eligible.any():
        scores = np.where(eligible, delta, -np.inf)
        index = int(np.argmax(scores)) + 1
        threshold = critical_value(level[index - 1], config.h0, config.epsilon)
        if delta[index - 1] < threshold or delta[index - 1] <= 0:
            log.debug(
                "Stopping at rank %d: %.6g below critical value %.6g",
                index,
                delta[index - 1],
                threshold,
            )
            break
        edge = index > size - k0
        anchor = size if edge else index
        where, location, jump_size = _measure(W, anchor, k0, config, edge)
        if not jump_size > 0:
            where, location, jump_size = anchor, float(W[anchor - 1]), float(delta[index - 1])
        jumps.append(Jump(location, jump_size, where, edge))
        log.info("Jump %d at %.6g (rank %d) of size %.6g", len(jumps), location, where, jump_size)
        eligible &= np.abs(ranks - index) > k0

    jumps.sort(key=lambda jump: jump.index)
    b, g, seg = discontinuous_density(
        W, [jump.index for jump in jumps], config.h1, config.density_points
    )
    return JumpSet(tuple(jumps), b, g, seg, size, skipped)


def setup_parser(subparsers):
    """
    Setup the subparser for the ``detect`` command.

    :param subparsers: The subparsers object returned from ``add_subparsers``
    :type subparsers: argparse._SubParsersAction
    """
    subparser = subparsers.add_parser(
        "detect",
        description="Detect discontinuities of the winning bid density.",
    )
    subparser.set_defaults(func=main)
    subparser.add_argument("--input", required=True, help="Outcome CSV")
    subparser.add_argument("--config", default=None, help="TOML run file")
    subparser.add_argument(
        "--out-dir", default="winbid-out", help="Output directory [default: %(default)s]"
    )
    subparser.add_argument("--h0", type=float, default=None, help="Detection window fraction")
    subparser.add_argument("--h1", type=float, default=None, help="Smoothing window fraction")
    subparser.add_argument("--epsilon", type=float, default=None, help="Level parameter")


def main(args):
    """
    The entrypoint to the ``detect`` command.

    :param args: The arguments to the command
    :type args: ``argparse.Namespace``
    """
    run = configuration.apply_overrides(configuration.load_config(args.config), args)
    sample = ingest_csv(args.input)
    result = detect_jumps(sample.competitive_prices(), run.detect)
    out = output_dir(args.out_dir)
    written = [
        write_table(out / "jumps.csv", result.jump_table()),
        write_table(out / "density.csv", result.density_table()),
    ]
    write_run_manifest(out, "detect", run.as_dict(), run.seed, written)
    print(f"Detected {len(result)} jumps, wrote {out}")
