# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
"""
Run configuration.

A run file is TOML with one table per stage::

    seed = 7

    [simulate]
    model = "benchmark"
    sample_size = 100000

    [simulate.values]
    family = "power"
    exponent = 0.5

    [detect]
    h0 = 0.3

Every table maps onto a frozen dataclass. Unknown keys and out of range
values raise ``ConfigError`` naming the dotted key.
"""
import dataclasses
import logging
import math
import pathlib
import sys

from .common import INFO_REGIMES, ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

MODELS = ("benchmark", "reserve", "entry")
VALUE_FAMILIES = ("power", "tabulated")
ENTRY_FAMILIES = ("uniform", "power", "tilted", "tabulated")


class ConfigError(ValidationError):
    """
    Raised when a configuration value is invalid.

    :param key: Dotted key of the offending value
    :type key: str
    :param message: What is wrong with it
    :type message: str
    """

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
        self.reason = message


def _require(condition, key, message):
    if not condition:
        raise ConfigError(key, message)


@dataclasses.dataclass(frozen=True)
class ValuesSpec:
    family: str = "power"
    exponent: float = 1.0
    lo: float = 0.0
    hi: float = 1.0
    path: str = None

    def __post_init__(self):
        _require(self.family in VALUE_FAMILIES, "family", f"must be one of {VALUE_FAMILIES}")
        _require(self.exponent > 0, "exponent", "must be positive")
        _require(self.hi > self.lo, "hi", "must exceed lo")
        _require(self.family != "tabulated" or self.path, "path", "tabulated values need a path")


@dataclasses.dataclass(frozen=True)
class CompetitionSpec:
    n_lo: int = 2
    weights: tuple = (0.5, 0.5)

    def __post_init__(self):
        _require(int(self.n_lo) == self.n_lo and self.n_lo >= 2, "n_lo", "must be an integer >= 2")
        _require(len(self.weights) > 0, "weights", "must not be empty")
        _require(all(w > 0 for w in self.weights), "weights", "must be strictly positive")
        _require(abs(sum(self.weights) - 1.0) <= 1e-9, "weights", "must sum to 1")


@dataclasses.dataclass(frozen=True)
class ScheduleSpec:
    """
    ``R(z) = intercept + slope * z``.
    """

    intercept: float = 0.5
    slope: float = 0.0


@dataclasses.dataclass(frozen=True)
class EntrySpec:
    family: str = "uniform"
    gamma: float = 0.0
    lo: float = 0.0
    hi: float = 1.0
    cost_intercept: float = 1.0 / 3.0
    cost_slope: float = 0.0
    path: str = None

    def __post_init__(self):
        _require(self.family in ENTRY_FAMILIES, "family", f"must be one of {ENTRY_FAMILIES}")
        _require(self.gamma >= 0, "gamma", "must be nonnegative")
        _require(self.family != "tilted" or self.gamma <= 1, "gamma", "tilted family needs gamma <= 1")
        _require(0 <= self.lo < self.hi, "lo", "entry values need 0 <= lo < hi")
        _require(self.family != "tabulated" or self.path, "path", "tabulated family needs a path")


@dataclasses.dataclass(frozen=True)
class InstrumentSpec:
    values: tuple = (0.0,)
    weights: tuple = (1.0,)

    def __post_init__(self):
        _require(len(self.values) > 0, "values", "must not be empty")
        _require(len(self.values) == len(self.weights), "weights", "must match values")
        _require(all(w >= 0 for w in self.weights), "weights", "must be nonnegative")
        _require(abs(sum(self.weights) - 1.0) <= 1e-9, "weights", "must sum to 1")


@dataclasses.dataclass(frozen=True)
class CovariateSpec:
    enabled: bool = False
    coefficients: tuple = (0.0, 0.0)

    def __post_init__(self):
        _require(len(self.coefficients) == 2, "coefficients", "needs exactly two entries")


@dataclasses.dataclass(frozen=True)
class SimConfig:
    """
    What to simulate and how many auctions to draw.
    """

    model: str = "benchmark"
    info: str = "known"
    sample_size: int = 1000
    seed: int = 0
    theta: float = 1.0
    n_potential: int = 2
    emit_bids: bool = False
    chunk_size: int = 65536
    workers: int = 1
    grid_size: int = 1001
    values: ValuesSpec = dataclasses.field(default_factory=ValuesSpec)
    competition: CompetitionSpec = dataclasses.field(default_factory=CompetitionSpec)
    reserve: ScheduleSpec = dataclasses.field(default_factory=ScheduleSpec)
    entry: EntrySpec = dataclasses.field(default_factory=EntrySpec)
    instrument: InstrumentSpec = dataclasses.field(default_factory=InstrumentSpec)
    covariates: CovariateSpec = dataclasses.field(default_factory=CovariateSpec)

    def __post_init__(self):
        _require(self.model in MODELS, "model", f"must be one of {MODELS}")
        _require(self.info in INFO_REGIMES, "info", f"must be one of {INFO_REGIMES}")
        _require(self.sample_size >= 1, "sample_size", "must be at least 1")
        _require(0 <= self.seed < 2**64, "seed", "must be a 64-bit unsigned integer")
        _require(0 < self.theta <= 1, "theta", "must lie in (0, 1]")
        _require(self.n_potential >= 2, "n_potential", "must be at least 2")
        _require(self.chunk_size >= 1, "chunk_size", "must be at least 1")
        _require(self.workers >= 1, "workers", "must be at least 1")
        _require(self.grid_size >= 200, "grid_size", "must be at least 200")
        _require(
            self.model == "benchmark" or self.info == "known" or self.theta == 1.0,
            "theta",
            "risk aversion is only supported by the benchmark and known-N models",
        )
        _require(
            not self.covariates.enabled or self.model == "benchmark",
            "covariates.enabled",
            "covariate heterogeneity is only simulated for the benchmark model",
        )


@dataclasses.dataclass(frozen=True)
class DetectionConfig:
    """
    Jump detector parameters.

    ``h_size`` is the window fraction used to measure the size of a detected
    jump, ``h0`` when unset.
    """

    h0: float = 0.2
    h1: float = 0.5
    epsilon: float = 0.01
    max_jumps: int = 10
    h_size: float = None
    density_points: int = 512

    def __post_init__(self):
        _require(0 < self.h0 < 1, "h0", "must lie in (0, 1)")
        _require(
            self.h0 < math.exp(-1),
            "h0",
            f"must be below 1/e = {math.exp(-1):.6f} for the critical value to be defined",
        )
        _require(self.h0 < self.h1 < 1, "h1", "must lie in (h0, 1)")
        _require(self.epsilon > 0, "epsilon", "must be positive")
        _require(self.max_jumps >= 1, "max_jumps", "must be at least 1")
        _require(self.h_size is None or 0 < self.h_size < 1, "h_size", "must lie in (0, 1)")
        _require(self.density_points >= 2, "density_points", "must be at least 2")


@dataclasses.dataclass(frozen=True)
class HillConfig:
    """
    Hill estimator of the lowest number of bidders.

    ``m_range`` is an inclusive ``(low, high)`` range of top order counts;
    unset means ``ceil(0.1 L)`` to ``ceil(0.3 L)``.
    """

    m_range: tuple = None
    cells: int = 2
    use_covariates: bool = False
    literal: bool = False

    def __post_init__(self):
        if self.m_range is not None:
            _require(len(self.m_range) == 2, "m_range", "needs a low and a high value")
            _require(2 <= self.m_range[0] <= self.m_range[1], "m_range", "needs 2 <= low <= high")
        _require(self.cells >= 1, "cells", "must be at least 1")


@dataclasses.dataclass(frozen=True)
class CompetitionConfig:
    n_lo: int = None
    theta: float = 1.0
    by_subsample: bool = False
    bid_counts: tuple = ()

    def __post_init__(self):
        _require(
            all(isinstance(k, int) and k >= 1 for k in self.bid_counts),
            "bid_counts",
            "must be positive integers",
        )
        _require(self.n_lo is None or self.n_lo >= 2, "n_lo", "must be at least 2")
        _require(0 < self.theta <= 1, "theta", "must lie in (0, 1]")


@dataclasses.dataclass(frozen=True)
class RecoveryConfig:
    alpha_min: float = 0.01
    max_iter: int = 50
    min_sample: int = 500
    points: int = 512
    nodes: int = 33
    stall: float = 1e-12
    rearrange: bool = True

    def __post_init__(self):
        _require(0 < self.alpha_min < 1, "alpha_min", "must lie in (0, 1)")
        _require(self.max_iter >= 1, "max_iter", "must be at least 1")
        _require(self.min_sample >= 2, "min_sample", "must be at least 2")
        _require(self.points >= 16, "points", "must be at least 16")
        _require(self.nodes >= 5, "nodes", "must be at least 5")


@dataclasses.dataclass(frozen=True)
class EndogenousConfig:
    """
    Thresholds of the identification and discrimination tests.
    """

    atom_min_count: int = 5
    atom_share: float = 0.001
    kappa_threshold: float = 0.75
    support_tolerance: float = 0.05
    top_share: float = 0.05
    integrality_tolerance: float = 0.2
    strong_jumps: int = 2
    binomial_tolerance: float = 0.02
    value_points: int = 201

    def __post_init__(self):
        _require(self.atom_min_count >= 1, "atom_min_count", "must be at least 1")
        _require(0 <= self.atom_share < 1, "atom_share", "must lie in [0, 1)")
        _require(self.kappa_threshold > 0, "kappa_threshold", "must be positive")
        _require(self.support_tolerance > 0, "support_tolerance", "must be positive")
        _require(0 < self.top_share < 1, "top_share", "must lie in (0, 1)")
        _require(self.integrality_tolerance > 0, "integrality_tolerance", "must be positive")
        _require(self.strong_jumps >= 1, "strong_jumps", "must be at least 1")
        _require(self.binomial_tolerance > 0, "binomial_tolerance", "must be positive")
        _require(self.value_points >= 10, "value_points", "must be at least 10")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    seed: int = None
    simulate: SimConfig = dataclasses.field(default_factory=SimConfig)
    detect: DetectionConfig = dataclasses.field(default_factory=DetectionConfig)
    hill: HillConfig = dataclasses.field(default_factory=HillConfig)
    competition: CompetitionConfig = dataclasses.field(default_factory=CompetitionConfig)
    recovery: RecoveryConfig = dataclasses.field(default_factory=RecoveryConfig)
    endogenous: EndogenousConfig = dataclasses.field(default_factory=EndogenousConfig)

    def __post_init__(self):
        _require(self.seed is None or 0 <= self.seed < 2**64, "seed", "must be a 64-bit unsigned integer")

    @property
    def effective_seed(self):
        return self.simulate.seed if self.seed is None else self.seed

    def as_dict(self):
        return dataclasses.asdict(self)


def _freeze(value):
    if isinstance(value, list):
        return tuple(_freeze(_) for _ in value)
    return value


def build(cls, table, prefix=""):
    """
    Build the dataclass ``cls`` from a mapping, recursing into sub-tables.

    :raises ConfigError: On unknown keys or invalid values, naming the
        dotted key
    """
    table = dict(table or {})
    fields = {field.name: field for field in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in table.items():
        dotted = f"{prefix}{key}"
        if key not in fields:
            raise ConfigError(dotted, "unknown key")
        kind = fields[key].type
        if dataclasses.is_dataclass(kind):
            if not isinstance(value, dict):
                raise ConfigError(dotted, "must be a table")
            kwargs[key] = build(kind, value, f"{dotted}.")
        else:
            kwargs[key] = _freeze(value)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        if prefix and not exc.key.startswith(prefix):
            raise ConfigError(f"{prefix}{exc.key}", exc.reason) from None
        raise
    except TypeError as exc:
        raise ConfigError(prefix.rstrip(".") or "config", str(exc)) from None


TABULATED = (("values", "simulate.values.path"), ("entry", "simulate.entry.path"))


def resolve_paths(run, base):
    """
    Resolve tabulated ``path`` keys against ``base``, the run file's
    directory.

    :raises ConfigError: If a tabulated file does not exist
    """
    base = pathlib.Path(base)
    specs = {}
    for name, key in TABULATED:
        spec = getattr(run.simulate, name)
        if spec.family != "tabulated":
            continue
        resolved = (base / spec.path).resolve()
        if not resolved.is_file():
            raise ConfigError(key, f"{resolved} does not exist")
        specs[name] = dataclasses.replace(spec, path=str(resolved))
    if not specs:
        return run
    return dataclasses.replace(run, simulate=dataclasses.replace(run.simulate, **specs))


def from_mapping(data, base=None):
    """
    Build a ``RunConfig`` from parsed TOML.

    Tabulated paths are resolved against ``base`` when it is given.
    """
    run = build(RunConfig, data)
    return run if base is None else resolve_paths(run, base)


def load_config(path=None):
    """
    Load a run file, or the defaults when ``path`` is None.

    :param path: TOML file
    :type path: str or ``pathlib.Path``

    :rtype: ``RunConfig``
    """
    if path is None:
        return RunConfig()
    path = pathlib.Path(path)
    with open(path, "rb") as fp:
        try:
            data = tomllib.load(fp)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(str(path), f"not valid TOML: {exc}") from None
    log.debug("Loaded run configuration from %s", path)
    return from_mapping(data, path.parent)


def parse_m_range(text):
    """
    Parse ``LOW:HIGH`` into a tuple of ints.
    """
    try:
        low, high = (int(_) for _ in text.split(":"))
    except ValueError:
        raise ConfigError("hill.m_range", f"expected LOW:HIGH, got {text!r}") from None
    return (low, high)


def _replace(section, prefix, **changes):
    changes = {key: value for key, value in changes.items() if value is not None}
    if not changes:
        return section
    try:
        return dataclasses.replace(section, **changes)
    except ConfigError as exc:
        raise ConfigError(f"{prefix}.{exc.key}", exc.reason) from None


def apply_overrides(config, args):
    """
    Apply command line flags on top of a run configuration.

    Flags that a command does not define are ignored.
    """
    def flag(name):
        return getattr(args, name, None)

    m_range = flag("m_range")
    detect = _replace(config.detect, "detect", h0=flag("h0"), h1=flag("h1"), epsilon=flag("epsilon"))
    hill = _replace(config.hill, "hill", m_range=parse_m_range(m_range) if m_range else None)
    competition = _replace(
        config.competition, "competition", theta=flag("theta"), n_lo=flag("n_lo")
    )
    recovery = _replace(config.recovery, "recovery", alpha_min=flag("alpha_min"))
    seed = flag("seed")
    return dataclasses.replace(
        config,
        seed=config.seed if seed is None else seed,
        detect=detect,
        hill=hill,
        competition=competition,
        recovery=recovery,
    )
