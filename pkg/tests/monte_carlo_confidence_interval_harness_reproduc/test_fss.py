import math
import random

import numpy as np
import pytest

from catbranch.fss import (
    FssConfig,
    FssConfigError,
    FssRow,
    TransformEstimate,
    beta,
    estimate_transform,
    fss_compare,
    gap_trend_ok,
    limit_transform,
    particle_samples,
    particle_transform,
    rescaled_totals,
    transform_samples,
)
from catbranch.lattice import Lattice
from catbranch.offspring import binary_critical, make_law
from catbranch.particles import ParticleState, SimConfig, run


def test_beta_scales_with_volume():
    assert beta(Lattice.torus(3, 1), 0.2) == pytest.approx(5.4)
    assert beta(Lattice.torus(3, 2), 1.0) == 125


def test_config_validation():
    with pytest.raises(FssConfigError):
        FssConfig(d=2)
    with pytest.raises(FssConfigError):
        FssConfig(T=1.5)
    with pytest.raises(FssConfigError):
        FssConfig(n_values=())
    with pytest.raises(FssConfigError, match="bound"):
        FssConfig(gamma=0.04)
    cfg = FssConfig(gamma=0.04, allow_unproven=True)
    assert cfg.gamma_sigma2 == pytest.approx(0.04)
    assert FssConfig().gamma_sigma2_bound == pytest.approx(0.036486, abs=5e-6)


def test_zero_arguments_give_exact_one():
    est = estimate_transform(np.array([1.0, 2.0]), np.array([0.5, 0.1]), 0.0, 0.0)
    assert est.value == 1 and est.stderr == 0


def test_transform_symmetries():
    rng = np.random.default_rng(0)
    X, Y = rng.random(50), rng.random(50)
    base = transform_samples(X, Y, 0.5, 1.0)
    # exchanging the samples only flips the sign of the oscillating term
    np.testing.assert_allclose(transform_samples(Y, X, 0.5, 1.0), base.conj(), atol=1e-15)
    # exchanging both the samples and the arguments leaves the integrand unchanged
    np.testing.assert_allclose(transform_samples(Y, X, 1.0, 0.5), base, atol=1e-15)
    assert np.all(np.abs(base) <= 1 + 1e-15)


def test_trivial_law_gives_frozen_value():
    cfg = FssConfig(n_values=(1,), law=make_law([0, 1]), replicates=5, theta1=2, theta2=1)
    est = particle_transform(cfg, 1)
    for (a, b), e in est.items():
        expected = complex(math.exp(-3 * (a + b)) * math.cos(-(a - b)), math.exp(-3 * (a + b)) * math.sin(-(a - b)))
        assert e.value == pytest.approx(expected, abs=1e-14)
        assert e.stderr < 1e-14


def test_limit_without_noise_is_exact():
    est = limit_transform(0.0, 1, 2, 0.2, [(0.5, 1.0)], replicates=10)
    expected = np.exp(-3 * 1.5 - 1j * (1 - 2) * (0.5 - 1.0))
    assert est[(0.5, 1.0)].value == pytest.approx(expected, abs=1e-14)


def test_limit_transform_approaches_initial_value_as_T_shrinks():
    initial = math.exp(-2.0)
    gaps = [abs(limit_transform(1.0, 1, 1, T, [(0.5, 0.5)], 20_000, seed=1)[(0.5, 0.5)].value - initial)
            for T in (0.2, 0.05, 0.01)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_particle_spread_shrinks_with_gamma():
    spreads = []
    for gamma in (0.03, 0.01, 0.003):
        X, _ = particle_samples(FssConfig(n_values=(1,), gamma=gamma, replicates=300, seed=4), 1)
        spreads.append(X.var())
    assert spreads[0] > spreads[1] > spreads[2]


def test_rescaled_totals():
    lat = Lattice.torus(3, 1)
    initial = ParticleState.constant(lat, 1, 2)
    cfg = SimConfig(lat, 1.0, 0.03, binary_critical(), beta(lat, 0.3), record_trajectory=True)
    traj = run(cfg, initial, random.Random(0))
    assert rescaled_totals(traj, lat, 0.0) == (1.0, 2.0)
    assert rescaled_totals(traj, lat, 0.3) == (traj.final.total_xi / 27, traj.final.total_eta / 27)
    mid = rescaled_totals(traj, lat, 0.1)
    assert all(v >= 0 for v in mid)
    with pytest.raises(ValueError):
        rescaled_totals(traj, lat, 0.5)


def test_rescaled_totals_frozen_for_trivial_law():
    lat = Lattice.torus(3, 1)
    cfg = SimConfig(lat, 1.0, 0.5, make_law([0, 1]), beta(lat, 0.2))
    traj = run(cfg, ParticleState.constant(lat, 2, 3), random.Random(1))
    assert rescaled_totals(traj, lat, 0.2) == (2.0, 3.0)


def _row(n, gap, se):
    return FssRow(n, 1.0, 1.0, TransformEstimate(gap, se, 10), TransformEstimate(0j, 0.0, 10), 0.05)


def test_gap_trend():
    assert gap_trend_ok([_row(1, 0.04, 0.001), _row(2, 0.02, 0.001)])
    assert gap_trend_ok([_row(1, 0.02, 0.01), _row(2, 0.04, 0.01)])
    assert not gap_trend_ok([_row(1, 0.01, 0.001), _row(2, 0.04, 0.001)])


def test_row_tolerance():
    assert _row(1, 0.06, 0.01).within_tolerance
    assert not _row(1, 0.2, 0.01).within_tolerance


def test_small_compare_run():
    cfg = FssConfig(n_values=(1, 2), replicates=40, limit_replicates=2000, grid=((0.0, 0.0), (1.0, 0.5)), seed=2)
    report = fss_compare(cfg)
    assert len(report.rows) == 4
    for n in (1, 2):
        row = report.row(n, 0.0, 0.0)
        assert row.gap == 0 and row.stderr == 0
    for row in report.rows:
        assert abs(row.particle.value) <= 1 + 1e-12
        assert abs(row.limit.value) <= 1 + 3 * row.limit.stderr
    with pytest.raises(KeyError):
        report.row(3, 0.0, 0.0)
