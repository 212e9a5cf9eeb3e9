# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
"""
The ``winbid simulate`` command and the auction simulator.

Draws are made in fixed-size chunks. Chunk ``c`` uses its own Philox stream
seeded from ``SeedSequence(seed, spawn_key=(c,))``, so the output does not
depend on how chunks are spread over worker processes.
"""
import dataclasses
import logging
import multiprocessing
import pathlib

import numpy as np
import pandas as pd

from . import config as configuration
from .common import (
    KNOWN_N,
    ValidationError,
    __version__,
    output_dir,
    write_json,
    write_run_manifest,
)
from .equilibrium import CompetitionPMF, ValueQuantile, winning_bid_mixture
from .numeric import chebyshev_grid
from .outcomes import OutcomeSample, write_csv
from .participation import (
    ConditionalFamily,
    EntryModel,
    ReserveModel,
    linear_schedule,
    outcome_distribution,
)

log = logging.getLogger(__name__)

_MODELS = {}


def setup_parser(subparsers):
    """
    Setup the subparser for the ``simulate`` command.

    :param subparsers: The subparsers object returned from ``add_subparsers``
    :type subparsers: argparse._SubParsersAction
    """
    subparser = subparsers.add_parser(
        "simulate",
        description="Draw auction outcomes from a configured model and write them as CSV.",
    )
    subparser.set_defaults(func=main)
    subparser.add_argument("--config", default=None, help="TOML run file")
    subparser.add_argument(
        "--out-dir", default="winbid-out", help="Output directory [default: %(default)s]"
    )
    subparser.add_argument("--seed", type=int, default=None, help="Override the seed")
    subparser.add_argument(
        "--sample-size", type=int, default=None, help="Override simulate.sample_size"
    )
    subparser.add_argument(
        "--workers", type=int, default=None, help="Override simulate.workers"
    )


def load_values(spec, grid):
    """
    Build the value quantile described by a ``ValuesSpec``.
    """
    if spec.family == "power":
        return ValueQuantile.power(spec.exponent, spec.lo, spec.hi, grid)
    frame = pd.read_csv(spec.path)
    for column in ("alpha", "value"):
        if column not in frame.columns:
            raise ValidationError(f"simulate.values.path: {spec.path} lacks a {column!r} column")
    return ValueQuantile.from_table(
        frame["alpha"].to_numpy(dtype=float),
        frame["value"].to_numpy(dtype=float),
        grid,
        name=pathlib.Path(spec.path).stem,
    )


def load_family(spec):
    """
    Build the conditional value family described by an ``EntrySpec``.
    """
    if spec.family == "uniform":
        return ConditionalFamily.uniform(spec.lo, spec.hi)
    if spec.family == "power":
        return ConditionalFamily.power(spec.gamma, spec.lo, spec.hi)
    if spec.family == "tilted":
        return ConditionalFamily.tilted(spec.gamma, spec.lo, spec.hi)
    frame = pd.read_csv(spec.path)
    if "v" not in frame.columns:
        raise ValidationError(f"simulate.entry.path: {spec.path} lacks a 'v' column")
    signals = [column for column in frame.columns if column != "v"]
    return ConditionalFamily.tabulated(
        frame["v"].to_numpy(dtype=float),
        [float(_) for _ in signals],
        frame[signals].to_numpy(dtype=float),
    )


def build_model(config):
    """
    Build the equilibrium objects behind a ``SimConfig``.

    :return: A benchmark mixture or a participation model
    """
    grid = chebyshev_grid(config.grid_size)
    if config.model == "benchmark":
        V = load_values(config.values, grid)
        pmf = CompetitionPMF.normalized(config.competition.n_lo, config.competition.weights)
        return winning_bid_mixture(V, pmf, config.theta, grid)
    if config.model == "reserve":
        V = load_values(config.values, grid)
        schedule = linear_schedule(config.reserve.intercept, config.reserve.slope)
        model = ReserveModel(V, config.n_potential, schedule, config.info)
    else:
        family = load_family(config.entry)
        cost = linear_schedule(config.entry.cost_intercept, config.entry.cost_slope)
        model = EntryModel(family, config.n_potential, cost, config.info)
    for z in config.instrument.values:
        if config.model == "reserve":
            model.screening(z)
        else:
            model.cost(z)
    return model


class _Simulator:
    """
    Per process cache of the model and its outcome laws by instrument value.
    """

    def __init__(self, config):
        self.config = config
        self.model = build_model(config)
        self.laws = {}

    def law(self, z):
        if z not in self.laws:
            self.laws[z] = outcome_distribution(self.model, z, chebyshev_grid(self.config.grid_size))
            log.debug("Outcome law at z=%s: q=%.6g", z, self.laws[z].screening)
        return self.laws[z]


def _simulator(config):
    if config not in _MODELS:
        _MODELS.clear()
        _MODELS[config] = _Simulator(config)
    return _MODELS[config]


def _max_uniform(rng, count, size_hint, emit):
    """
    Max of ``count`` uniforms per row and, when ``emit``, the uniforms.
    """
    size = count.size
    if emit:
        draws = rng.random((size, size_hint))
        draws[np.arange(size_hint)[None, :] >= count[:, None]] = np.nan
        top = np.where(np.isnan(draws), 0.0, draws).max(axis=1)
        return top, draws
    u = rng.random(size)
    with np.errstate(divide="ignore"):
        top = np.where(count > 0, np.power(u, 1.0 / np.maximum(count, 1)), 0.0)
    return top, None


def _benchmark_chunk(sim, rng, size, z):
    config = sim.config
    mixture = sim.model
    pmf = mixture.pmf
    count = rng.choice(pmf.support, size=size, p=np.asarray(pmf.weights))
    top, draws = _max_uniform(rng, count, pmf.n_hi, config.emit_bids)
    price = np.empty(size)
    bids = None if draws is None else np.full(draws.shape, np.nan)
    for n in pmf.support:
        rows = count == n
        if not rows.any():
            continue
        price[rows] = mixture.interpolate_bids(n, top[rows])
        if bids is not None:
            bids[rows, :n] = mixture.interpolate_bids(n, draws[rows, :n])
    columns = {"price": price, "sold": np.ones(size, dtype=bool), "atom": np.zeros(size, dtype=bool)}
    if config.covariates.enabled:
        covariates = rng.random((size, 2))
        scale = np.exp(covariates @ np.asarray(config.covariates.coefficients, dtype=float))
        columns["price"] = price * scale
        columns["covariates"] = covariates
        if bids is not None:
            bids = bids * scale[:, None]
    columns["bids"] = bids
    return columns


def _participation_chunk(sim, rng, size, z):
    config = sim.config
    n_potential = config.n_potential
    price = np.full(size, np.nan)
    sold = np.zeros(size, dtype=bool)
    atom = np.zeros(size, dtype=bool)
    lone = np.zeros(size, dtype=bool)
    bids = np.full((size, n_potential), np.nan) if config.emit_bids else None
    count = np.zeros(size, dtype=int)
    laws = {}
    for value in np.unique(z):
        rows = z == value
        law = sim.law(float(value))
        laws[float(value)] = law
        count[rows] = rng.binomial(n_potential, 1.0 - law.screening, size=int(rows.sum()))
    top, draws = _max_uniform(rng, count, n_potential, config.emit_bids)
    for value, law in laws.items():
        rows = z == value
        sold[rows] = count[rows] > 0
        if law.info == KNOWN_N:
            single = rows & (count == 1)
            price[single] = law.atom_price
            atom[single] = True
            if bids is not None:
                bids[single, 0] = law.atom_price
            for n in range(2, n_potential + 1):
                group = rows & (count == n)
                if not group.any():
                    continue
                price[group] = law.mixture.interpolate_bids(n, top[group])
                if bids is not None:
                    bids[group, :n] = law.mixture.interpolate_bids(n, draws[group, :n])
        else:
            active = rows & (count > 0)
            price[active] = law.bid.interpolate(top[active])
            lone[rows & (count == 1)] = True
            if bids is not None:
                bids[active] = np.where(
                    np.isnan(draws[active]), np.nan, law.bid.interpolate(np.nan_to_num(draws[active]))
                )
    columns = {"price": price, "sold": sold, "atom": atom, "bids": bids}
    if config.info != KNOWN_N:
        columns["lone"] = lone
    return columns


def simulate_chunk(config, chunk):
    """
    Draw the records of chunk ``chunk``.

    :return: Column arrays of the chunk
    :rtype: dict
    """
    start = chunk * config.chunk_size
    size = min(config.chunk_size, config.sample_size - start)
    sim = _simulator(config)
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(config.seed, spawn_key=(chunk,)))
    )
    instrument = config.instrument
    z = rng.choice(np.asarray(instrument.values, dtype=float), size=size, p=np.asarray(instrument.weights))
    if config.model == "benchmark":
        columns = _benchmark_chunk(sim, rng, size, z)
    else:
        columns = _participation_chunk(sim, rng, size, z)
    columns["z"] = z
    return columns


def _provenance(config):
    return {
        "source": "simulate",
        "seed": config.seed,
        "version": __version__,
        "config": dataclasses.asdict(config),
    }


def simulate(config):
    """
    Draw ``config.sample_size`` auction outcomes.

    :param config: The simulation configuration
    :type config: ``winbid.config.SimConfig``

    :return: The simulated outcomes
    :rtype: ``winbid.outcomes.OutcomeSample``
    """
    _simulator(config)
    chunks = range(-(-config.sample_size // config.chunk_size))
    if config.workers > 1 and len(chunks) > 1:
        log.info("Simulating %d chunks on %d workers", len(chunks), config.workers)
        with multiprocessing.Pool(config.workers) as pool:
            parts = pool.starmap(simulate_chunk, [(config, c) for c in chunks])
    else:
        parts = [simulate_chunk(config, c) for c in chunks]

    def join(name):
        if parts[0].get(name) is None:
            return None
        return np.concatenate([part[name] for part in parts])

    has_instrument = len(set(config.instrument.values)) > 1 or config.model != "benchmark"
    sample = OutcomeSample(
        join("price"),
        join("sold"),
        join("atom"),
        z=join("z") if has_instrument else None,
        covariates=join("covariates"),
        lone=join("lone"),
        bids=join("bids"),
        provenance=_provenance(config),
    )
    freq = sample.frequencies()
    log.info(
        "Simulated %d auctions of the %s model: not sold %.4f, atom %.4f",
        len(sample),
        config.model,
        freq["not_sold"],
        freq["atom"],
    )
    return sample


def main(args):
    """
    The entrypoint to the ``simulate`` command.

    :param args: The arguments to the command
    :type args: ``argparse.Namespace``
    """
    run = configuration.apply_overrides(configuration.load_config(args.config), args)
    sim = dataclasses.replace(
        run.simulate,
        seed=run.effective_seed,
        sample_size=args.sample_size or run.simulate.sample_size,
        workers=args.workers or run.simulate.workers,
    )
    out = output_dir(args.out_dir)
    sample = simulate(sim)
    outcomes = write_csv(sample, out / "outcomes.csv")
    provenance = write_json(out / "outcomes.provenance.json", sample.provenance)
    effective = dataclasses.asdict(run)
    effective["simulate"] = dataclasses.asdict(sim)
    write_run_manifest(out, "simulate", effective, sim.seed, [outcomes, provenance])
    print(f"Wrote {len(sample)} outcomes to {outcomes}")
