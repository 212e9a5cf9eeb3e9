# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
"""
The ``winbid estimate`` command.
"""
import logging

from . import config as configuration
from .common import DiagnosticsFailure, output_dir, write_json, write_run_manifest, write_table
from .competition import identify_by_subsample
from .outcomes import ingest_csv
from .recover import empirical_pipeline, write_recovery

log = logging.getLogger(__name__)


def setup_parser(subparsers):
    """
    Setup the subparser for the ``estimate`` command.

    :param subparsers: The subparsers object returned from ``add_subparsers``
    :type subparsers: argparse._SubParsersAction
    """
    subparser = subparsers.add_parser(
        "estimate",
        description=(
            "Estimate the competition distribution and the value quantile function "
            "from winning bids."
        ),
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
    subparser.add_argument(
        "--m-range", default=None, help="Hill order range as LOW:HIGH [default: 10%%:30%% of L]"
    )
    subparser.add_argument("--theta", type=float, default=None, help="CRRA exponent")
    subparser.add_argument(
        "--n-lo", type=int, default=None, help="Lowest number of bidders, skips the Hill step"
    )
    subparser.add_argument("--alpha-min", type=float, default=None, help="Stop below this alpha")
    subparser.add_argument("--seed", type=int, default=None, help="Recorded in the manifest")


def main(args):
    """
    The entrypoint to the ``estimate`` command.

    Writes ``competition.json`` even when the competition diagnostics fail,
    then exits with the diagnostics failure code.

    :param args: The arguments to the command
    :type args: ``argparse.Namespace``
    """
    run = configuration.apply_overrides(configuration.load_config(args.config), args)
    sample = ingest_csv(args.input)
    out = output_dir(args.out_dir)
    result = empirical_pipeline(sample, run, strict=False)
    subsamples = None
    if run.competition.by_subsample or run.competition.bid_counts:
        hill = run.hill if run.competition.n_lo is None else None
        subsamples = identify_by_subsample(
            sample,
            result.estimate.n_lo,
            run.competition.theta,
            run.detect,
            bid_counts=run.competition.bid_counts,
            hill=hill,
        )
    written = [
        write_json(out / "competition.json", result.competition_report(subsamples)),
        write_table(out / "jumps.csv", result.jumps.jump_table()),
        write_table(out / "density.csv", result.jumps.density_table()),
    ]
    if result.hill is not None:
        written.append(write_table(out / "hill_trace.csv", result.hill.trace_table()))
    if result.recovered is not None:
        written.extend(write_recovery(out, result.recovered))
    write_run_manifest(out, "estimate", run.as_dict(), run.seed, written)
    if not result.estimate.passed:
        failed = [c["name"] for c in result.estimate.diagnostics["checks"] if not c["passed"]]
        raise DiagnosticsFailure(
            f"competition diagnostics failed: {', '.join(failed)}", result.estimate.diagnostics
        )
    estimate = result.estimate
    print(
        f"Estimated n={estimate.n_lo}..{estimate.n_hi}, v_hi={estimate.v_hi:.4g}, wrote {out}"
    )
