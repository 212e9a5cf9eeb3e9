# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
"""
The ``winbid diagnose`` command.
"""
import logging

import numpy as np

from . import config as configuration
from .common import KNOWN_N, UNKNOWN_N, WinbidException, output_dir, write_json, write_run_manifest, write_table
from .endogenous import (
    ENTRY,
    IGNORE_N,
    INCONCLUSIVE,
    OBSERVE_N,
    RESERVE,
    DiscriminationReport,
    discriminate,
    identify_entry,
    identify_reserve_knownN,
    identify_reserve_unknownN_atoms,
    identify_reserve_unknownN_instrument,
    summarize_by_instrument,
)
from .outcomes import ingest_csv

log = logging.getLogger(__name__)

INFO_OF_VERDICT = {OBSERVE_N: KNOWN_N, IGNORE_N: UNKNOWN_N}


def _attempt(name, func, *args, **kwargs):
    try:
        return func(*args, **kwargs).as_dict()
    except WinbidException as exc:
        log.warning("%s not identified: %s", name, exc)
        return {"error": str(exc)}


def _reserve_by_instrument(outcomes, info, config):
    per_z = {}
    for outcome in outcomes:
        found = {}
        lone = outcome.p_atom if info == KNOWN_N else outcome.p_lone
        if lone > 0:
            found["atoms"] = _attempt(
                f"z={outcome.z} atoms", identify_reserve_unknownN_atoms, outcome.p_not_sold, lone, config
            )
        if info == KNOWN_N and outcome.competition is not None:
            found["weights"] = _attempt(
                f"z={outcome.z} weights",
                identify_reserve_knownN,
                outcome.competition,
                reserve=outcome.lower,
                p_not_sold=outcome.p_not_sold,
                config=config,
            )
        per_z[str(outcome.z)] = found
    return per_z


def diagnose(sample, run=None):
    """
    Run the discrimination tests and the identification they point to.

    :param sample: Outcomes, normally with a ``z`` column
    :type sample: ``winbid.outcomes.OutcomeSample``
    :param run: Run configuration
    :type run: ``winbid.config.RunConfig``

    :return: The report, the per instrument summaries, the identification
        results and the cost curve columns
    :rtype: tuple
    """
    run = run or configuration.RunConfig()
    config = run.endogenous
    if sample.z is None:
        log.warning("No z column: participation and information cannot be discriminated")
        report = DiscriminationReport(INCONCLUSIVE, (), INCONCLUSIVE, ())
        return report, [], {}, {"z": [], "s_hat": [], "c_hat": []}

    outcomes = summarize_by_instrument(
        sample, config, run.detect, run.recovery, recover_values=True
    )
    report = discriminate(outcomes, config)
    info = INFO_OF_VERDICT.get(report.info_verdict)
    identification = {}
    curve = {"z": [o.z for o in outcomes], "s_hat": [np.nan] * len(outcomes), "c_hat": [np.nan] * len(outcomes)}
    if report.entry_verdict == ENTRY and info is not None:
        try:
            entry = identify_entry(outcomes, info, config)
            identification["entry"] = entry.as_dict()
            curve = entry.cost_curve()
        except WinbidException as exc:
            log.warning("Entry model not identified: %s", exc)
            identification["entry"] = {"error": str(exc)}
    elif report.entry_verdict == RESERVE and info is not None:
        identification["reserve"] = _reserve_by_instrument(outcomes, info, config)
        if info == UNKNOWN_N:
            identification["instrument"] = _attempt(
                "Instrument system", identify_reserve_unknownN_instrument, outcomes, config
            )
    else:
        log.info("No identification for verdicts %s and %s", report.info_verdict, report.entry_verdict)
    return report, outcomes, identification, curve


def setup_parser(subparsers):
    """
    Setup the subparser for the ``diagnose`` command.

    :param subparsers: The subparsers object returned from ``add_subparsers``
    :type subparsers: argparse._SubParsersAction
    """
    subparser = subparsers.add_parser(
        "diagnose",
        description=(
            "Test whether bidders observe their number and whether participation is "
            "screened by a reserve price or an entry cost."
        ),
    )
    subparser.set_defaults(func=main)
    subparser.add_argument("--input", required=True, help="Outcome CSV with a z column")
    subparser.add_argument("--config", default=None, help="TOML run file")
    subparser.add_argument(
        "--out-dir", default="winbid-out", help="Output directory [default: %(default)s]"
    )
    subparser.add_argument("--h0", type=float, default=None, help="Detection window fraction")
    subparser.add_argument("--epsilon", type=float, default=None, help="Level parameter")


def main(args):
    """
    The entrypoint to the ``diagnose`` command.

    :param args: The arguments to the command
    :type args: ``argparse.Namespace``
    """
    run = configuration.apply_overrides(configuration.load_config(args.config), args)
    sample = ingest_csv(args.input)
    out = output_dir(args.out_dir)
    report, outcomes, identification, curve = diagnose(sample, run)
    data = report.as_dict()
    data["per_z"] = [o.as_dict() for o in outcomes]
    data["identification"] = identification
    written = [
        write_json(out / "endogenous.json", data),
        write_table(out / "cost_curve.csv", curve),
    ]
    write_run_manifest(out, "diagnose", run.as_dict(), run.seed, written)
    print(f"{report.info_verdict}, {report.entry_verdict}, wrote {out}")
