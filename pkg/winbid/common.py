# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
"""
Common classes and values used around winbid.
"""
import datetime
import hashlib
import json
import logging
import pathlib

import numpy as np
import pandas as pd

# winbid package version
__version__ = "0.1.0"

MODULE_DIR = pathlib.Path(__file__).resolve().parent

SCHEMA_DIR = MODULE_DIR / "schemas"

KNOWN_N = "known"
UNKNOWN_N = "unknown"
INFO_REGIMES = (KNOWN_N, UNKNOWN_N)

log = logging.getLogger(__name__)


class WinbidException(Exception):
    """
    Base class for exceptions generated from winbid.

    Every subclass carries the process exit code the CLI uses when the
    exception escapes a command.
    """

    exit_code = 1


class ValidationError(WinbidException):
    """
    Raised when an input or a configuration value is out of range.
    """

    exit_code = 2


class DiagnosticsFailure(WinbidException):
    """
    Raised when model diagnostics reject the data.

    :param message: Human readable summary
    :type message: str
    :param report: The diagnostics report that failed
    :type report: dict
    """

    exit_code = 3

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


def check_info(info):
    """
    Validate an information regime name.

    :param info: Either ``"known"`` or ``"unknown"``
    :type info: str

    :raises ValidationError: If the regime is not recognized
    """
    if info not in INFO_REGIMES:
        raise ValidationError(
            f"info must be one of {', '.join(INFO_REGIMES)}, got {info!r}"
        )
    return info


def jsonable(obj):
    """
    Convert numpy scalars and arrays nested in ``obj`` to plain python.
    """
    if isinstance(obj, dict):
        return {str(key): jsonable(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(value) for value in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if not np.isfinite(value):
            return None
        return value
    if isinstance(obj, pathlib.Path):
        return str(obj)
    return obj


def write_json(path, data):
    """
    Write ``data`` as indented, key-sorted JSON.

    :param path: Destination file
    :type path: str or ``pathlib.Path``
    :param data: JSON compatible data, numpy values allowed
    :type data: dict

    :return: The path written
    :rtype: ``pathlib.Path``
    """
    path = pathlib.Path(path)
    path.write_text(json.dumps(jsonable(data), indent=2, sort_keys=True) + "\n")
    log.debug("Wrote %s", path)
    return path


def write_table(path, columns):
    """
    Write a mapping of column name to values as CSV.

    Floats are written with the shortest representation that round trips.
    """
    path = pathlib.Path(path)
    pd.DataFrame(columns).to_csv(path, index=False, lineterminator="\n")
    log.debug("Wrote %s", path)
    return path


def config_hash(config):
    """
    Hash the canonical JSON form of a configuration mapping.

    :param config: The effective configuration
    :type config: dict

    :return: Hex encoded SHA-256 digest
    :rtype: str
    """
    canonical = json.dumps(jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def output_dir(path):
    """
    Create, if needed, and return the output directory of a command.
    """
    path = pathlib.Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_run_manifest(out_dir, command, config, seed, artifacts):
    """
    Write ``run_manifest.json`` describing a command invocation.

    :param out_dir: The command's output directory
    :type out_dir: ``pathlib.Path``
    :param command: The subcommand name
    :type command: str
    :param config: The effective configuration
    :type config: dict
    :param seed: The seed in effect, if any
    :type seed: int or None
    :param artifacts: Paths written by the command
    :type artifacts: list

    :return: Path of the manifest
    :rtype: ``pathlib.Path``
    """
    manifest = {
        "command": command,
        "config_hash": config_hash(config),
        "seed": seed,
        "version": __version__,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "artifacts": sorted(pathlib.Path(_).name for _ in artifacts),
    }
    return write_json(pathlib.Path(out_dir) / "run_manifest.json", manifest)
