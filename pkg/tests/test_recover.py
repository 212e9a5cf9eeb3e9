# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
import numpy as np
import pytest

from winbid.common import ValidationError
from winbid.competition import CompetitionEstimate, SampleSizeError, identify_competition
from winbid.config import CompetitionConfig, DetectionConfig, RecoveryConfig, RunConfig
from winbid.equilibrium import CompetitionPMF, ValueQuantile, winning_bid_mixture
from winbid.outcomes import OutcomeSample
from winbid.recover import (
    InconsistentInputsError,
    empirical_pipeline,
    iterate_recovery,
    lobatto_nodes,
    top_component,
    write_recovery,
)

RATIO = 25.0 / 36.0


@pytest.fixture(scope="module")
def recovered(sqrt_mixture, sqrt_estimate):
    config = RecoveryConfig(max_iter=12)
    return iterate_recovery(sqrt_mixture.cdf, sqrt_mixture.pdf, sqrt_estimate, config=config)


def test_lobatto_nodes():
    nodes = lobatto_nodes(0.0, 2.0, 5)
    assert nodes[0] == pytest.approx(0.0)
    assert nodes[-1] == pytest.approx(2.0)
    assert np.all(np.diff(nodes) > 0)


def test_top_component(sqrt_mixture, sqrt_estimate):
    top = top_component(sqrt_mixture.cdf, sqrt_mixture.pdf, sqrt_estimate)
    assert top.alpha_seq[0] == pytest.approx(RATIO, abs=1e-8)
    assert top.beta_seq[0] == pytest.approx(5.0 / 9.0, abs=1e-8)
    assert top.iterations == 1
    alpha = np.linspace(RATIO, 1.0, 20)
    assert np.allclose(top(alpha), np.sqrt(alpha), atol=1e-6)
    assert np.allclose(top.bid(3, alpha), 0.8 * np.sqrt(alpha), atol=1e-6)


def test_top_component_at_table_ends(sqrt_mixture, sqrt_estimate):
    top = top_component(sqrt_mixture.cdf, sqrt_mixture.pdf, sqrt_estimate)
    assert float(top(RATIO)) == pytest.approx(5.0 / 6.0, abs=1e-6)
    assert float(top(1.0)) == pytest.approx(1.0, abs=1e-6)
    assert float(top.bid(3, RATIO)) == pytest.approx(2.0 / 3.0, abs=1e-6)


def test_recovered_at_last_alpha(recovered):
    last = recovered.alpha_seq[-1]
    assert np.isfinite(recovered(last))
    assert float(recovered(last)) == pytest.approx(np.sqrt(last), abs=1e-3)


def test_second_step_keeps_lower_component_exact(sqrt_mixture, sqrt_estimate):
    # b_2 = 2/3 closes the lower segment, where G_2 reaches 1
    result = iterate_recovery(
        sqrt_mixture.cdf, sqrt_mixture.pdf, sqrt_estimate, config=RecoveryConfig(max_iter=2)
    )
    assert result.stop_reason == "max_iter"
    alpha = np.linspace(result.alpha_seq[-1], 1.0, 50)
    assert np.max(np.abs(result(alpha) - np.sqrt(alpha))) < 1e-4
    assert np.max(np.abs(result.bid(2, alpha) - 2.0 / 3.0 * np.sqrt(alpha))) < 1e-4


def test_alpha_sequence(recovered):
    assert recovered.alpha_seq[1] == pytest.approx(625.0 / 1296.0, abs=1e-8)
    ratios = np.array(recovered.alpha_seq[1:]) / np.array(recovered.alpha_seq[:-1])
    assert np.allclose(ratios, RATIO, rtol=1e-6)


def test_iterate_recovery(recovered):
    assert recovered.iterations == 12
    assert recovered.stop_reason == "max_iter"
    alpha = recovered.alpha[recovered.alpha >= recovered.alpha_lo]
    assert np.max(np.abs(recovered(alpha) - np.sqrt(alpha))) < 1e-3
    assert np.all(np.diff(recovered.values) >= 0)


def test_recovered_bids(recovered):
    alpha = np.linspace(0.1, 1.0, 10)
    assert np.allclose(recovered.bid(2, alpha), 2.0 / 3.0 * np.sqrt(alpha), atol=1e-3)


def test_recovery_alpha_min(sqrt_mixture, sqrt_estimate):
    result = iterate_recovery(
        sqrt_mixture.cdf, sqrt_mixture.pdf, sqrt_estimate, config=RecoveryConfig(alpha_min=0.3)
    )
    assert result.stop_reason == "alpha_min"
    assert result.alpha_seq[-1] < 0.3 <= result.alpha_seq[-2]


def test_recovery_tables(recovered, tmp_path):
    frame = recovered.to_frame()
    assert list(frame) == ["alpha", "V_hat", "B_hat_2", "B_hat_3"]
    trace = recovered.trace()
    assert trace["iterations"] == 12
    assert trace["alpha_lo"] == recovered.alpha_lo
    written = write_recovery(tmp_path, recovered)
    assert [path.name for path in written] == ["value_quantile.csv", "recovery_trace.json"]
    assert (tmp_path / "value_quantile.csv").read_text().startswith("alpha,V_hat,B_hat_2,B_hat_3\n")


def test_recovery_inconsistent(sqrt_mixture):
    # The true weights are 1/2 each
    wrong = CompetitionEstimate(
        2, 3, (0.8, 0.2), 1.0, 1.0, (2.0 / 3.0, 0.8), (3.0, 3.75), {"passed": True, "checks": []}
    )
    with pytest.raises(InconsistentInputsError):
        iterate_recovery(sqrt_mixture.cdf, sqrt_mixture.pdf, wrong)


def test_single_component(sqrt_values):
    mixture = winning_bid_mixture(sqrt_values, CompetitionPMF(2, (1.0,)))
    estimate = identify_competition(mixture.jump_points, 2)
    result = iterate_recovery(mixture.cdf, mixture.pdf, estimate, lower=0.0)
    assert result.stop_reason == "support"
    alpha = np.linspace(0.05, 1.0, 20)
    assert np.allclose(result(alpha), np.sqrt(alpha), atol=5e-3)


def test_single_component_needs_lower(sqrt_values):
    mixture = winning_bid_mixture(sqrt_values, CompetitionPMF(2, (1.0,)))
    estimate = identify_competition(mixture.jump_points, 2)
    with pytest.raises(ValidationError, match="lower bound"):
        iterate_recovery(mixture.cdf, mixture.pdf, estimate)


def test_uniform_values_recovered():
    V = ValueQuantile.uniform()
    mixture = winning_bid_mixture(V, CompetitionPMF(2, (0.25, 0.75)))
    estimate = identify_competition(mixture.jump_points, 2)
    assert estimate.weights == pytest.approx((0.25, 0.75), abs=1e-8)
    result = iterate_recovery(mixture.cdf, mixture.pdf, estimate, config=RecoveryConfig(max_iter=8))
    alpha = result.alpha[result.alpha > 0.05]
    assert np.allclose(result(alpha), alpha, atol=1e-3)


def test_pipeline_sample_too_small():
    sample = OutcomeSample(np.linspace(0.1, 0.9, 100), np.ones(100, dtype=bool))
    with pytest.raises(SampleSizeError, match="at least 500"):
        empirical_pipeline(sample)


@pytest.mark.slow
def test_pipeline_recovers_values(sqrt_mixture, draw):
    prices = draw(sqrt_mixture, 200000, 17)
    sample = OutcomeSample(prices, np.ones(prices.size, dtype=bool))
    run = RunConfig(
        detect=DetectionConfig(h0=0.3, h_size=0.05),
        competition=CompetitionConfig(n_lo=2),
        recovery=RecoveryConfig(alpha_min=0.2),
    )
    result = empirical_pipeline(sample, run)
    assert result.estimate.passed
    assert result.estimate.weights == pytest.approx((0.5, 0.5), abs=0.1)
    alpha = np.linspace(0.3, 0.95, 14)
    assert np.max(np.abs(result.recovered(alpha) - np.sqrt(alpha))) < 0.05
    report = result.competition_report()
    assert report["n_lo_source"] == "config"
    assert report["v_hi_hat"] == result.estimate.v_hi
