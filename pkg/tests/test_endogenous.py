# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
import numpy as np
import pytest

from winbid.common import ValidationError
from winbid.config import InstrumentSpec, ScheduleSpec, SimConfig
from winbid.endogenous import (
    ENTRY,
    IGNORE_N,
    INCONCLUSIVE,
    OBSERVE_N,
    RESERVE,
    InfeasibleAtomsError,
    InstrumentedOutcome,
    NotIdentifiedError,
    binomial_weights,
    discriminate,
    identify_entry,
    identify_reserve_knownN,
    identify_reserve_unknownN_atoms,
    identify_reserve_unknownN_instrument,
    instrumented_outcome_from_model,
    phi,
    summarize_by_instrument,
)
from winbid.equilibrium import CompetitionPMF, ValueQuantile
from winbid.participation import ConditionalFamily, EntryModel, ReserveModel, linear_schedule
from winbid.simulate import simulate


def outcome(z, upper, slope, p_not_sold=0.25, **kwargs):
    return InstrumentedOutcome(z, p_not_sold, 0.0, 0.5, 0.5, upper, slope, **kwargs)


@pytest.fixture(scope="module")
def reserve_unknown():
    model = ReserveModel(ValueQuantile.uniform(), 2, linear_schedule(0.5, 0.1), "unknown")
    return [instrumented_outcome_from_model(model, z) for z in (0.0, 1.0)]


@pytest.fixture(scope="module")
def reserve_known():
    model = ReserveModel(ValueQuantile.uniform(), 3, linear_schedule(0.4, 0.1), "known")
    return [instrumented_outcome_from_model(model, z) for z in (0.0, 1.0)]


@pytest.fixture(scope="module")
def entry_unknown():
    model = EntryModel(ConditionalFamily.uniform(), 2, linear_schedule(1.0 / 3.0, 0.05), "unknown")
    return [instrumented_outcome_from_model(model, z) for z in (0.0, 1.0)]


def test_binomial_weights():
    assert np.allclose(binomial_weights(3, 0.5), [0.75, 0.25])


def test_phi():
    assert phi(0.5) == pytest.approx(-1.0 / np.log(2.0))
    x = np.linspace(0.05, 0.95, 10)
    assert np.all(np.diff(phi(x)) > 0)


def test_reserve_known_from_weights():
    found = identify_reserve_knownN(CompetitionPMF(2, (0.75, 0.25)), reserve=0.5)
    assert found.n_hi == 3
    assert found.screening == pytest.approx(0.5)
    assert found.screening_fit == pytest.approx(0.5, abs=1e-6)
    assert found.lack_of_fit == pytest.approx(0.0, abs=1e-12)
    assert not found.misfit
    assert found.source == "weights"
    assert found.as_dict()["reserve"] == 0.5


def test_reserve_known_composes_values():
    V = ValueQuantile.uniform(0.5, 1.0)
    found = identify_reserve_knownN([0.75, 0.25], values=V)
    assert found.value_alpha[0] == pytest.approx(0.5)
    assert found.value_alpha[-1] == pytest.approx(1.0)
    assert np.allclose(found.value, found.value_alpha, atol=1e-12)


def test_reserve_known_misfit():
    found = identify_reserve_knownN([0.4, 0.2, 0.4])
    assert found.misfit
    assert found.lack_of_fit > 0.02


def test_reserve_known_single_component():
    with pytest.raises(NotIdentifiedError, match="not sold"):
        identify_reserve_knownN([1.0])
    found = identify_reserve_knownN([1.0], p_not_sold=0.25)
    assert found.screening == pytest.approx(0.5)
    assert found.source == "atoms"


@pytest.mark.parametrize(
    "p_not_sold, p_atom, q, n",
    [(0.25, 0.5, 0.5, 2), (0.25, 0.41421356, 1.0 / np.sqrt(2.0), 4)],
)
def test_reserve_unknown_atoms(p_not_sold, p_atom, q, n):
    found = identify_reserve_unknownN_atoms(p_not_sold, p_atom)
    assert found.screening == pytest.approx(q, abs=1e-6)
    assert found.n_hi == n
    assert found.residual < 1e-5
    assert not found.misfit


def test_reserve_unknown_atoms_to_machine_precision():
    found = identify_reserve_unknownN_atoms(0.25, 0.5)
    assert found.screening == pytest.approx(0.5, abs=1e-8)
    assert found.n_hi == 2


@pytest.mark.parametrize(
    "p_not_sold, p_atom",
    [(0.25, 0.0), (0.0, 0.5), (0.5, 0.6), (0.25, 0.01)],
    ids=["no-atom", "no-unsold", "too-large", "outside-range"],
)
def test_reserve_unknown_atoms_infeasible(p_not_sold, p_atom):
    with pytest.raises(InfeasibleAtomsError):
        identify_reserve_unknownN_atoms(p_not_sold, p_atom)


def test_infeasible_atoms_is_validation_error():
    assert issubclass(InfeasibleAtomsError, ValidationError)


def test_upper_slopes_identify_values():
    outcomes = [outcome(0.0, 0.625, 16.0 / 3.0), outcome(1.0, 0.68, 6.25, p_not_sold=0.36)]
    found = identify_reserve_unknownN_instrument(outcomes)
    assert found.v_hi == pytest.approx(1.0, abs=1e-9)
    assert found.n_hi == 2
    assert found.screening == {0.0: pytest.approx(0.5), 1.0: pytest.approx(0.6)}


def test_upper_bound_constant_in_z():
    outcomes = [outcome(0.0, 0.625, 16.0 / 3.0), outcome(1.0, 0.625, 16.0 / 3.0)]
    with pytest.raises(NotIdentifiedError, match="does not vary"):
        identify_reserve_unknownN_instrument(outcomes)


def test_instrumented_outcome_invalid():
    with pytest.raises(ValidationError, match="p_not_sold"):
        outcome(0.0, 0.6, 1.0, p_not_sold=1.5)
    with pytest.raises(ValidationError, match="exceeds"):
        InstrumentedOutcome(0.0, 0.25, 0.0, 0.5, 0.7, 0.6, 1.0)


def test_outcome_from_reserve_model(reserve_unknown):
    first, second = reserve_unknown
    assert first.upper == pytest.approx(0.625, abs=1e-9)
    assert second.upper == pytest.approx(0.68, abs=1e-9)
    assert first.upper_slope == pytest.approx(16.0 / 3.0, rel=1e-6)
    assert second.p_not_sold == pytest.approx(0.36)
    assert not first.atom
    assert first.interior_jumps == 0


def test_reserve_unknown_from_model(reserve_unknown):
    found = identify_reserve_unknownN_instrument(reserve_unknown)
    assert found.v_hi == pytest.approx(1.0, abs=1e-6)
    assert found.n_hi == 2
    assert found.screening[0.0] == pytest.approx(0.5, abs=1e-6)
    assert found.screening[1.0] == pytest.approx(0.6, abs=1e-6)
    # F(v) = v for the uniform values
    inside = np.isfinite(found.cdf) & (found.value_grid > 0.62) & (found.value_grid < 0.98)
    assert np.allclose(found.cdf[inside], found.value_grid[inside], atol=1e-3)
    assert found.overlap < 1e-3


def test_discriminate_reserve_known(reserve_known):
    report = discriminate(reserve_known)
    assert report.info_verdict == OBSERVE_N
    assert report.entry_verdict == RESERVE
    tests = {evidence.test: evidence for evidence in report.info_evidence}
    assert tests["interior_jumps"].supports == OBSERVE_N
    assert tests["atom"].supports == OBSERVE_N


def test_discriminate_entry_unknown(entry_unknown):
    report = discriminate(entry_unknown)
    assert report.info_verdict == IGNORE_N
    assert report.entry_verdict == ENTRY
    tests = {evidence.test: evidence for evidence in report.info_evidence}
    assert tests["lower_tail_exponent"].statistic == pytest.approx(0.5, abs=0.1)
    assert sorted(report.as_dict()) == ["entry_evidence", "entry_verdict", "info_evidence", "info_verdict"]


def test_discriminate_single_instrument(reserve_known):
    report = discriminate(reserve_known[:1])
    assert report.entry_verdict == INCONCLUSIVE
    assert [e.strength for e in report.entry_evidence[1:]] == ["not_run", "not_run"]


def test_discriminate_nothing():
    report = discriminate([])
    assert report.info_verdict == INCONCLUSIVE
    assert report.entry_verdict == INCONCLUSIVE


def test_identify_entry(entry_unknown):
    found = identify_entry(entry_unknown, "unknown")
    assert found.n_hi == 2
    assert found.s == pytest.approx((0.5, 0.65), abs=1e-6)
    assert found.cost == pytest.approx((1.0 / 3.0, 0.38333333), abs=1e-4)
    assert not found.signal_free_assumed
    assert sorted(found.cost_curve()) == ["c_hat", "s_hat", "z"]


def test_identify_entry_single_threshold(entry_unknown):
    found = identify_entry(entry_unknown[:1], "unknown")
    assert found.signal_free_assumed
    assert found.cost[0] == pytest.approx(1.0 / 3.0, abs=1e-4)


def test_identify_entry_bad_info(entry_unknown):
    with pytest.raises(ValidationError):
        identify_entry(entry_unknown, "sometimes")


def test_summarize_by_instrument():
    config = SimConfig(
        model="reserve",
        info="known",
        sample_size=8000,
        seed=2,
        reserve=ScheduleSpec(0.4, 0.1),
        instrument=InstrumentSpec(values=(0.0, 1.0), weights=(0.5, 0.5)),
    )
    outcomes = summarize_by_instrument(simulate(config))
    assert [o.z for o in outcomes] == [0.0, 1.0]
    for o, reserve in zip(outcomes, (0.4, 0.5)):
        assert o.atom
        assert o.lower == pytest.approx(reserve)
        assert o.p_not_sold == pytest.approx(reserve**2, abs=0.03)
        assert o.n_obs > 3000


def test_summarize_needs_instrument():
    config = SimConfig(sample_size=100)
    with pytest.raises(ValidationError, match="z"):
        summarize_by_instrument(simulate(config))
