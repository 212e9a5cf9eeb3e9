# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
import json

import numpy as np
import pytest

from winbid.common import (
    DiagnosticsFailure,
    ValidationError,
    WinbidException,
    __version__,
    check_info,
    config_hash,
    jsonable,
    output_dir,
    write_json,
    write_run_manifest,
    write_table,
)


def test_exit_codes():
    assert WinbidException.exit_code == 1
    assert ValidationError.exit_code == 2
    assert DiagnosticsFailure.exit_code == 3


def test_diagnostics_failure_report():
    exc = DiagnosticsFailure("failed", {"passed": False})
    assert exc.report == {"passed": False}
    assert DiagnosticsFailure("failed").report == {}


def test_check_info():
    assert check_info("known") == "known"
    assert check_info("unknown") == "unknown"


def test_check_info_unknown_regime():
    with pytest.raises(ValidationError, match="info must be one of"):
        check_info("sometimes")


def test_jsonable_numpy():
    data = {
        "a": np.float64(0.5),
        "b": np.arange(3),
        "c": np.bool_(True),
        "d": (np.int64(2), float("nan")),
        1: float("inf"),
    }
    assert jsonable(data) == {"a": 0.5, "b": [0, 1, 2], "c": True, "d": [2, None], "1": None}


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": 2.0}) == config_hash({"b": 2.0, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 64


def test_write_json(tmp_path):
    path = write_json(tmp_path / "out.json", {"b": np.array([1.5]), "a": None})
    text = path.read_text()
    assert text.endswith("\n")
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": None, "b": [1.5]}


def test_write_table(tmp_path):
    path = write_table(tmp_path / "out.csv", {"x": [0.1, 0.25], "n": [2, 3]})
    assert path.read_text().splitlines() == ["x,n", "0.1,2", "0.25,3"]


def test_output_dir_creates_parents(tmp_path):
    out = output_dir(tmp_path / "a" / "b")
    assert out.is_dir()
    assert output_dir(out) == out


def test_write_run_manifest(tmp_path, validate_schema):
    written = write_table(tmp_path / "jumps.csv", {"location": [0.5]})
    path = write_run_manifest(tmp_path, "detect", {"h0": 0.2}, None, [written])
    data = validate_schema(path, "run_manifest")
    assert data["artifacts"] == ["jumps.csv"]
    assert data["version"] == __version__
    assert data["config_hash"] == config_hash({"h0": 0.2})
