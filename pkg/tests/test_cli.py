# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
import json

import pytest

from winbid.__main__ import main

RESERVE_RUN = """
[simulate]
model = "reserve"
sample_size = 8000
seed = 2

[simulate.reserve]
intercept = 0.4
slope = 0.1

[simulate.instrument]
values = [0.0, 1.0]
weights = [0.5, 0.5]
"""

SQRT_RUN = """
[simulate]
sample_size = 20000
seed = 4

[simulate.values]
exponent = 0.5

[detect]
h0 = 0.3
h_size = 0.05
"""


def run(*argv):
    """
    Run the cli and return its exit code.
    """
    try:
        main([str(_) for _ in argv])
    except SystemExit as exc:
        return exc.code
    return 0


@pytest.fixture
def run_file(tmp_path):
    def write(text, name="run.toml"):
        path = tmp_path / name
        path.write_text(text)
        return path

    return write


def test_version(capsys):
    assert run("--version") == 0
    assert capsys.readouterr().out.strip()


def test_no_subcommand():
    assert run() == 1


def test_simulate(tmp_path, run_file, validate_schema, capsys):
    out = tmp_path / "out"
    assert run("simulate", "--config", run_file(RESERVE_RUN), "--out-dir", out) == 0
    assert "Wrote 8000 outcomes" in capsys.readouterr().out
    header = (out / "outcomes.csv").read_text().splitlines()[0]
    assert header.split(",")[:2] == ["winning_bid", "sold"]
    provenance = validate_schema(out / "outcomes.provenance.json", "provenance")
    assert provenance["seed"] == 2
    manifest = validate_schema(out / "run_manifest.json", "run_manifest")
    assert manifest["command"] == "simulate"


def test_simulate_reproducible(tmp_path, run_file):
    path = run_file(RESERVE_RUN)
    first, second, parallel = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert run("simulate", "--config", path, "--out-dir", first) == 0
    assert run("simulate", "--config", path, "--out-dir", second) == 0
    assert run("simulate", "--config", path, "--out-dir", parallel, "--workers", "2") == 0
    expected = (first / "outcomes.csv").read_bytes()
    assert (second / "outcomes.csv").read_bytes() == expected
    assert (parallel / "outcomes.csv").read_bytes() == expected


def test_simulate_seed_override(tmp_path, run_file):
    path = run_file(RESERVE_RUN)
    assert run("simulate", "--config", path, "--out-dir", tmp_path / "a") == 0
    assert run("simulate", "--config", path, "--out-dir", tmp_path / "b", "--seed", "3") == 0
    first = (tmp_path / "a" / "outcomes.csv").read_bytes()
    assert (tmp_path / "b" / "outcomes.csv").read_bytes() != first


def test_invalid_config_exit_code(run_file, tmp_path):
    path = run_file("[simulate]\nsample_size = 0\n")
    assert run("simulate", "--config", path, "--out-dir", tmp_path / "out") == 2


def test_invalid_flag_exit_code(tmp_path):
    csv = tmp_path / "outcomes.csv"
    csv.write_text("winning_bid,sold\n0.5,1\n")
    assert run("detect", "--input", csv, "--h0", "0.5", "--out-dir", tmp_path / "out") == 2


def test_missing_input_exit_code(tmp_path):
    assert run("detect", "--input", tmp_path / "missing.csv", "--out-dir", tmp_path / "out") == 4


def test_malformed_input_exit_code(tmp_path):
    csv = tmp_path / "outcomes.csv"
    csv.write_text("winning_bid\n0.5\n")
    assert run("detect", "--input", csv, "--out-dir", tmp_path / "out") == 4


def test_detect(tmp_path, run_file, validate_schema):
    out = tmp_path / "sim"
    assert run("simulate", "--config", run_file(SQRT_RUN), "--out-dir", out) == 0
    det = tmp_path / "det"
    assert run("detect", "--input", out / "outcomes.csv", "--out-dir", det) == 0
    header = (det / "jumps.csv").read_text().splitlines()[0]
    assert header == "location,size,index,edge_flag"
    assert (det / "density.csv").read_text().startswith("b,g_hat,segment_id\n")
    validate_schema(det / "run_manifest.json", "run_manifest")


def test_recover_rejects_failed_competition(tmp_path, run_file):
    out = tmp_path / "sim"
    assert run("simulate", "--config", run_file(SQRT_RUN), "--out-dir", out) == 0
    competition = tmp_path / "competition.json"
    competition.write_text(
        json.dumps(
            {
                "n_lo": 2,
                "n_hi": 3,
                "weights": [1.006, -0.006],
                "v_hi": 0.87,
                "theta": 1.0,
                "locations": [0.2, 0.9],
                "sizes": [3.0, 0.3],
                "diagnostics": {"passed": False, "checks": []},
            }
        )
    )
    code = run(
        "recover",
        "--input",
        out / "outcomes.csv",
        "--competition",
        competition,
        "--out-dir",
        tmp_path / "rec",
    )
    assert code == 3


@pytest.mark.slow
def test_estimate(tmp_path, run_file, validate_schema):
    config = run_file(SQRT_RUN)
    out = tmp_path / "sim"
    assert run("simulate", "--config", config, "--out-dir", out) == 0
    est = tmp_path / "est"
    code = run("estimate", "--input", out / "outcomes.csv", "--config", config, "--n-lo", "2", "--out-dir", est)
    assert code == 0
    report = validate_schema(est / "competition.json", "competition")
    assert report["n_lo"] == 2
    assert report["n_lo_source"] == "config"
    assert report["diagnostics"]["passed"]
    validate_schema(est / "recovery_trace.json", "recovery_trace")
    assert (est / "value_quantile.csv").read_text().startswith("alpha,V_hat,")


def test_diagnose(tmp_path, run_file, validate_schema):
    out = tmp_path / "sim"
    assert run("simulate", "--config", run_file(RESERVE_RUN), "--out-dir", out) == 0
    diag = tmp_path / "diag"
    assert run("diagnose", "--input", out / "outcomes.csv", "--out-dir", diag) == 0
    report = validate_schema(diag / "endogenous.json", "endogenous")
    assert report["info_verdict"] == "BuyersObserveN"
    assert [item["z"] for item in report["per_z"]] == [0.0, 1.0]
    assert (diag / "cost_curve.csv").read_text().startswith("z,s_hat,c_hat\n")


def test_diagnose_without_instrument(tmp_path, validate_schema):
    csv = tmp_path / "outcomes.csv"
    csv.write_text("winning_bid,sold\n" + "".join(f"{0.01 * i},1\n" for i in range(1, 60)))
    diag = tmp_path / "diag"
    assert run("diagnose", "--input", csv, "--out-dir", diag) == 0
    report = validate_schema(diag / "endogenous.json", "endogenous")
    assert report["info_verdict"] == "Inconclusive"
    assert report["per_z"] == []
