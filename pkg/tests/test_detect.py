# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
import numpy as np
import pytest

from winbid.common import ValidationError
from winbid.config import DetectionConfig
from winbid.detect import (
    DegenerateWindowError,
    critical_factor,
    critical_value,
    detect_jumps,
    discontinuous_density,
    knn_density,
    tentative_jump,
    window_size,
)
from winbid.equilibrium import CompetitionPMF, ValueQuantile, winning_bid_mixture

GRID = np.arange(10) / 10.0

# At h0=0.2 the estimated jump at b=2/3 on the sqrt mixture sits just under its
# critical value; the wider window clears it.
SQRT_DETECTION = DetectionConfig(h0=0.3, h_size=0.05)


@pytest.mark.parametrize("h, size, k", [(0.2, 100, 10), (0.4, 10, 2), (0.001, 10, 1)])
def test_window_size(h, size, k):
    assert window_size(h, size) == k


def test_knn_density_equally_spaced():
    assert knn_density(GRID, 5, 0.4) == pytest.approx(1.0)


def test_knn_density_truncated_window():
    # Ranks 1..3 span 0.2
    assert knn_density(GRID, 1, 0.4) == pytest.approx(2 / (10 * 0.2))


def test_knn_density_degenerate():
    with pytest.raises(DegenerateWindowError):
        knn_density(np.array([0.0, 0.5, 0.5, 0.5, 0.5, 1.0]), 3, 0.2)


def test_knn_density_rank_outside():
    with pytest.raises(ValidationError):
        knn_density(GRID, 11, 0.4)


def test_tentative_jump_flat():
    assert tentative_jump(GRID, 5, 0.4) == pytest.approx(0.0, abs=1e-12)


def test_tentative_jump_step():
    # Dense block on the left of rank 5, sparse on the right
    W = np.concatenate([np.linspace(0.0, 0.1, 5), np.linspace(0.3, 0.9, 5)[1:], [1.0]])
    assert tentative_jump(W, 5, 0.4) > 0


def test_critical_factor():
    assert critical_factor(0.2, 0.01) == pytest.approx(1.0129108, abs=1e-4)
    assert critical_value(2.0, 0.2, 0.01) == pytest.approx(2 * 1.0129108, abs=2e-4)


@pytest.mark.parametrize("h0", [0.4, 0.37, 0.0])
def test_critical_factor_h0_outside(h0):
    with pytest.raises(ValidationError, match="h0"):
        critical_factor(h0, 0.01)


def test_detection_config_rejects_large_h0():
    with pytest.raises(ValidationError):
        DetectionConfig(h0=0.5)


def test_detect_too_small():
    with pytest.raises(ValidationError, match="at least 20"):
        detect_jumps(np.linspace(0.0, 1.0, 10))


def test_detect_rejects_nan():
    with pytest.raises(ValidationError):
        detect_jumps([0.1, np.nan] * 20)


def test_detect_skips_tied_windows():
    rng = np.random.default_rng(3)
    sample = np.concatenate([rng.random(2000), np.full(300, 0.5)])
    result = detect_jumps(sample)
    assert result.skipped > 0


def test_detect_uniform_has_no_interior_jump():
    rng = np.random.default_rng(7)
    result = detect_jumps(rng.random(20000))
    assert result.interior == ()
    assert all(jump.edge for jump in result.jumps)


def test_detect_max_jumps(draw):
    mixture = winning_bid_mixture(ValueQuantile.uniform(), CompetitionPMF(2, (0.5, 0.5)))
    sample = draw(mixture, 20000, 1)
    result = detect_jumps(sample, DetectionConfig(max_jumps=1))
    assert len(result) == 1


def test_discontinuous_density_segments():
    W = np.sort(np.random.default_rng(2).random(1000))
    b, g, seg = discontinuous_density(W, [500], 0.1, points=100)
    assert set(seg) == {0, 1}
    assert np.all(b[seg == 0] <= W[499])
    assert np.all(b[seg == 1] >= W[500])
    assert np.all(g > 0)


def test_jump_tables():
    result = detect_jumps(np.random.default_rng(4).random(5000))
    table = result.jump_table()
    assert sorted(table) == ["edge_flag", "index", "location", "size"]
    assert sorted(result.density_table()) == ["b", "g_hat", "segment_id"]


@pytest.mark.slow
def test_detect_sqrt_mixture(sqrt_mixture, draw):
    sample = draw(sqrt_mixture, 100000, 21)
    result = detect_jumps(sample, SQRT_DETECTION)
    assert len(result) == 2
    for jump, (location, size) in zip(result.jumps, sqrt_mixture.jump_points):
        assert jump.location == pytest.approx(location, abs=0.01)
        assert jump.size == pytest.approx(size, rel=0.15)
    assert result.jumps[-1].edge
    assert result.integral() == pytest.approx(1.0, abs=0.05)


@pytest.mark.slow
def test_detect_single_component(draw):
    mixture = winning_bid_mixture(ValueQuantile.power(0.5), CompetitionPMF(2, (1.0,)))
    sample = draw(mixture, 100000, 5)
    result = detect_jumps(sample)
    assert len(result) == 1
    assert result.jumps[0].edge
    assert result.jumps[0].location == pytest.approx(2.0 / 3.0, abs=0.01)


def step_sample(size, seed):
    """
    Density 1.5 on [0, 0.5) and 0.5 on [0.5, 1].
    """
    u = np.random.default_rng(seed).random(size)
    return np.where(u < 0.75, u / 1.5, 0.5 + (u - 0.75) / 0.5)


def test_discontinuous_density_tracks_steps():
    result = detect_jumps(step_sample(20000, 8))
    assert len(result.interior) == 1
    assert result.interior[0].location == pytest.approx(0.5, abs=0.01)
    assert result.interior[0].size == pytest.approx(1.0, rel=0.15)
    assert result.jumps[-1].edge
    assert result.density([0.1, 0.25, 0.4]) == pytest.approx([1.5] * 3, rel=0.1)
    assert result.density([0.6, 0.75, 0.9]) == pytest.approx([0.5] * 3, rel=0.1)


def piecewise_sample(seed, size=3000):
    """
    Draws from a density that is constant on four random intervals of [0, 1].
    """
    rng = np.random.default_rng(seed)
    bounds = np.concatenate([[0.0], np.sort(rng.random(3)), [1.0]])
    widths = np.diff(bounds)
    mass = rng.uniform(0.2, 3.0, 4) * widths
    pick = rng.choice(4, size, p=mass / mass.sum())
    return bounds[pick] + rng.random(size) * widths[pick]


@pytest.mark.parametrize("seed", range(100))
def test_detect_scale_equivariant(seed):
    sample = piecewise_sample(seed)
    scale = 2.0 ** np.random.default_rng(seed).integers(-4, 5)
    base = detect_jumps(sample)
    scaled = detect_jumps(scale * sample)
    assert [jump.index for jump in scaled.jumps] == [jump.index for jump in base.jumps]
    assert [jump.edge for jump in scaled.jumps] == [jump.edge for jump in base.jumps]
    assert np.allclose(scaled.locations, scale * base.locations, rtol=1e-12)
    assert np.allclose(scaled.sizes, base.sizes / scale, rtol=1e-12)


@pytest.mark.parametrize("seed", range(100))
def test_detect_fewer_jumps_at_larger_epsilon(seed):
    sample = piecewise_sample(seed)
    low, high = np.sort(np.random.default_rng(seed).uniform(0.001, 2.0, 2))
    loose = detect_jumps(sample, DetectionConfig(epsilon=low))
    strict = detect_jumps(sample, DetectionConfig(epsilon=high))
    assert len(strict) <= len(loose)
    assert {jump.index for jump in strict.jumps} <= {jump.index for jump in loose.jumps}


@pytest.mark.parametrize("seed", range(100))
def test_detect_jumps_are_separated(seed):
    sample = piecewise_sample(seed)
    result = detect_jumps(sample)
    k0 = window_size(DetectionConfig().h0, sample.size)
    assert np.all(np.diff([jump.index for jump in result.jumps]) > k0)
