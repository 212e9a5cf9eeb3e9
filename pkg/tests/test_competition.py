# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
import numpy as np
import pytest

from winbid.common import ValidationError
from winbid.competition import (
    CompetitionEstimate,
    SampleSizeError,
    bid_count_split,
    crra_lower_bound,
    default_m_range,
    hill_n_lower,
    hill_trace,
    identify_by_subsample,
    identify_competition,
    normalized_bids,
    round_hill,
    subsample_split,
)
from winbid.config import HillConfig
from winbid.equilibrium import CompetitionPMF, ValueQuantile, winning_bid_mixture
from winbid.outcomes import OutcomeSample

# Jumps whose implied weights break every validity check
INVALID_JUMPS = [(0.2, 3.0), (0.9, 0.3)]


def sold(prices, **kwargs):
    prices = np.asarray(prices, dtype=float)
    return OutcomeSample(prices, np.ones(prices.size, dtype=bool), **kwargs)


def test_identify_sqrt(sqrt_estimate):
    assert sqrt_estimate.v_hi == pytest.approx(1.0, abs=1e-8)
    assert sqrt_estimate.weights == pytest.approx((0.5, 0.5), abs=1e-8)
    assert (sqrt_estimate.n_lo, sqrt_estimate.n_hi) == (2, 3)
    assert sqrt_estimate.passed
    assert sqrt_estimate.location(3) == pytest.approx(0.8)
    assert sqrt_estimate.probability(4) == 0.0


def test_identify_risk_averse(sqrt_mixture):
    estimate = identify_competition(sqrt_mixture.jump_points, 2, theta=0.5)
    assert estimate.v_hi == pytest.approx(0.875, abs=1e-8)
    assert estimate.weights == pytest.approx((0.625, 0.375), abs=1e-8)


def test_identify_single_jump():
    estimate = identify_competition([(0.5, 2.0)], 3)
    assert estimate.weights == (1.0,)
    assert estimate.v_hi == pytest.approx(0.5 + 3.0 / (2.0 * 2.0))
    assert estimate.pmf() == CompetitionPMF(3, (1.0,))


def test_identify_sorts_jumps(sqrt_mixture, sqrt_estimate):
    estimate = identify_competition(list(reversed(sqrt_mixture.jump_points)), 2)
    assert estimate.weights == pytest.approx(sqrt_estimate.weights)


def test_identify_failed_diagnostics():
    estimate = identify_competition(INVALID_JUMPS, 2)
    assert not estimate.passed
    failed = {check["name"] for check in estimate.diagnostics["checks"] if not check["passed"]}
    assert {"p_3>=0", "v_hi>b_hi", "sum_w(b_hi-b_k)<=theta"} <= failed
    with pytest.raises(ValidationError):
        estimate.pmf()


@pytest.mark.parametrize(
    "jumps, n_lo, theta",
    [([], 2, 1.0), ([(0.5, 1.0)], 1, 1.0), ([(0.5, 1.0)], 2, 0.0), ([(0.5, 1.0)], 2, 1.5)],
    ids=["no-jumps", "n_lo", "theta-zero", "theta-above-one"],
)
def test_identify_invalid(jumps, n_lo, theta):
    with pytest.raises(ValidationError):
        identify_competition(jumps, n_lo, theta)


def test_estimate_from_dict(sqrt_estimate):
    assert CompetitionEstimate.from_dict(sqrt_estimate.as_dict()) == sqrt_estimate


def test_crra_lower_bound(sqrt_mixture):
    bound = crra_lower_bound(sqrt_mixture.jump_points, 2)
    assert bound.lower == pytest.approx(0.2, abs=1e-10)
    assert bound.binding == "p_2<=1"
    assert bound.informative
    assert set(bound.candidates) == {"p_2<=1", "p_3>=0", "v_hi>b_hi"}


def test_crra_bound_single_jump():
    bound = crra_lower_bound([(0.5, 2.0)], 2)
    assert bound.lower == 0.0
    assert bound.binding is None
    assert not bound.as_dict()["informative"]


def test_crra_bound_makes_jumps_valid(sqrt_mixture):
    bound = crra_lower_bound(sqrt_mixture.jump_points, 2)
    assert identify_competition(sqrt_mixture.jump_points, 2, theta=bound.lower + 1e-6).passed
    assert not identify_competition(sqrt_mixture.jump_points, 2, theta=bound.lower - 1e-3).passed


@pytest.mark.parametrize("n_tilde, k", [(2.5, 2), (2.51, 3), (1.9, 2), (3.0, 3), (4.5, 4)])
def test_round_hill(n_tilde, k):
    assert round_hill(n_tilde) == k


def test_default_m_range():
    assert default_m_range(100) == (10, 30)
    assert default_m_range(5) == (2, 2)


def test_normalized_bids():
    assert np.allclose(normalized_bids(sold([2.0, 3.0, 4.0])), [0.0, 0.5, 1.0])


def test_normalized_bids_need_bid_columns():
    with pytest.raises(ValidationError, match="use_covariates"):
        normalized_bids(sold([2.0, 3.0]), HillConfig(use_covariates=True))


def test_normalized_bids_by_cell():
    covariates = [[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]]
    bids = [[2.0, 1.0], [3.0, 2.5], [4.0, 2.0], [6.0, 5.0]]
    sample = sold([2.0, 3.0, 4.0, 6.0], covariates=covariates, bids=bids)
    normalized = normalized_bids(sample, HillConfig(use_covariates=True))
    # W / v_lo is 2, 3 in the first cell and 2, 3 in the second
    assert np.allclose(normalized, [0.0, 0.5, 0.0, 0.5])


def test_hill_trace_power_law():
    positive = (np.arange(1, 1001) / 1000.0) ** (1.0 / 3.0)
    normalized = np.concatenate([[0.0], positive])
    n_tilde = hill_trace(normalized, [200, 250, 300])
    assert np.allclose(n_tilde, 3.0, atol=0.1)


def test_hill_trace_too_few():
    with pytest.raises(SampleSizeError):
        hill_trace(np.array([0.0, 0.5, 1.0]), [10])


def test_hill_m_range_too_large():
    with pytest.raises(SampleSizeError, match="exceeds"):
        hill_n_lower(sold([1.0, 2.0, 3.0]), HillConfig(m_range=(2, 10)))


def test_hill_n_lower(draw):
    mixture = winning_bid_mixture(ValueQuantile.uniform(1.0, 2.0), CompetitionPMF(2, (0.5, 0.5)))
    result = hill_n_lower(sold(draw(mixture, 20000, 13)))
    assert result.n_lower == 2
    assert result.m[0] == 2000
    assert result.m[-1] == 6000
    assert sorted(result.trace_table()) == ["M", "n_tilde"]


def test_subsample_split():
    rng = np.random.default_rng(9)
    covariates = rng.random((400, 2))
    parts = subsample_split(sold(rng.random(400), covariates=covariates))
    assert list(parts) == ["Low", "Medium", "High"]
    median = np.median(covariates, axis=0)
    assert np.all(parts["Low"].covariates <= median)
    assert np.all(parts["High"].covariates > median)
    assert 0 < len(parts["Medium"]) < 400


def test_subsample_split_needs_covariates():
    with pytest.raises(ValidationError, match="covariates"):
        subsample_split(sold([0.1, 0.2]))


def test_identify_by_subsample_reports_errors():
    rng = np.random.default_rng(1)
    sample = sold(rng.random(30), covariates=rng.random((30, 2)))
    results = identify_by_subsample(sample, 2)
    assert sorted(results) == ["High", "Low", "Medium"]
    assert all("at least 20" in message for message in results.values())


def padded_bids(counts):
    bids = np.full((len(counts), max(counts)), np.nan)
    for row, count in enumerate(counts):
        bids[row, :count] = np.linspace(0.1, 0.2, count)
    return bids


def test_bid_count_split():
    counts = [2] * 30 + [3] * 50 + [4] * 5
    sample = sold(np.linspace(0.2, 0.8, len(counts)), bids=padded_bids(counts))
    parts = bid_count_split(sample, (2, 3, 5))
    assert list(parts) == ["2 bids", "3 bids", "5 bids"]
    assert [len(part) for part in parts.values()] == [30, 50, 0]
    assert np.all(parts["3 bids"].bid_counts() == 3)


def test_identify_by_bid_count(monkeypatch):
    counts = [2] * 40 + [3] * 60
    sample = sold(np.linspace(0.2, 0.8, len(counts)), bids=padded_bids(counts))
    seen = []

    def fake_detect(prices, config):
        seen.append(prices.size)
        return [(2 / 3, 3.0), (0.8, 3.75)]

    monkeypatch.setattr("winbid.competition.detect_jumps", fake_detect)
    results = identify_by_subsample(sample, 2, bid_counts=(2, 3))
    assert list(results) == ["2 bids", "3 bids"]
    assert seen == [40, 60]
    assert results["3 bids"].weights == pytest.approx((0.5, 0.5), abs=1e-8)


def test_identify_by_bid_count_reruns_hill(monkeypatch):
    counts = [2] * 40 + [3] * 60
    sample = sold(np.linspace(0.2, 0.8, len(counts)), bids=padded_bids(counts))
    monkeypatch.setattr(
        "winbid.competition.detect_jumps", lambda prices, config: [(2 / 3, 3.0), (0.8, 3.75)]
    )
    results = identify_by_subsample(sample, 2, bid_counts=(2,), hill=HillConfig(m_range=(50, 60)))
    assert "exceeds" in results["2 bids"]


def test_identify_by_bid_count_keeps_covariate_split():
    rng = np.random.default_rng(1)
    sample = sold(rng.random(30), covariates=rng.random((30, 2)), bids=padded_bids([2] * 30))
    results = identify_by_subsample(sample, 2, bid_counts=(2,))
    assert list(results) == ["Low", "Medium", "High", "2 bids"]
