# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
import json
import pathlib

import jsonschema
import numpy as np
import pytest

from winbid.common import SCHEMA_DIR
from winbid.competition import identify_competition
from winbid.equilibrium import CompetitionPMF, ValueQuantile, winning_bid_mixture


@pytest.fixture(scope="session")
def sqrt_values():
    return ValueQuantile.power(0.5)


@pytest.fixture(scope="session")
def sqrt_mixture(sqrt_values):
    """
    ``V(alpha) = sqrt(alpha)`` with two or three bidders, each half the time.
    """
    return winning_bid_mixture(sqrt_values, CompetitionPMF(2, (0.5, 0.5)))


@pytest.fixture(scope="session")
def sqrt_estimate(sqrt_mixture):
    return identify_competition(sqrt_mixture.jump_points, 2)


@pytest.fixture
def validate_schema():
    def validate(path, name):
        schema = json.loads((SCHEMA_DIR / f"{name}.json").read_text())
        data = json.loads(pathlib.Path(path).read_text())
        jsonschema.validate(data, schema)
        return data

    return validate


@pytest.fixture
def draw():
    """
    Draw winning bids from a mixture by inverting its cdf on a fine grid.
    """

    def sample(mixture, size, seed):
        rng = np.random.default_rng(seed)
        b = np.linspace(mixture.lower, mixture.upper, 20001)
        levels = np.maximum.accumulate(mixture.cdf(b))
        return np.interp(rng.random(size), levels, b)

    return sample
