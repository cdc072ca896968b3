"""Finite-system-scheme experiment.

Run the particle system on the torus of half-width ``n`` in dimension
``d >= 3`` from constant fields ``(theta1, theta2)`` up to time
``beta_n(T) = |L_n| T``, and compare the mixed Laplace-Fourier transform

    E exp(-(X + Y)(a + b) - i (X - Y)(a - b))

of the rescaled totals ``(total_xi, total_eta) / |L_n|`` with that of the
limit diffusion ``dX = sqrt(gamma sigma^2 X Y) dw1``, ``dY = sqrt(gamma sigma^2 X Y) dw2``
at time ``T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Optional, Sequence

import numpy as np

from .kernels import green_infinity_zd, max_gamma_sigma2
from .lattice import Lattice
from .offspring import OffspringLaw, binary_critical
from .parallel import replicate_map
from .particles import ParticleState, ParticleSystem, SimConfig, Trajectory, total_mass_series
from .sde import DEFAULT_BATCH, DEFAULT_DT, complex_mean, integrate_limit
from .seeding import derive_replicate_seed, particle_rng, sde_rng

DEFAULT_GRID = tuple((a, b) for a in (0.0, 0.5, 1.0) for b in (0.0, 0.5, 1.0))
DEFAULT_GAP_TOLERANCE = 0.05
_FSS_STREAM_DOMAIN = 2


class FssConfigError(ValueError):
    pass


def beta(lattice: Lattice, t: float) -> float:
    """Size-dependent time change ``|L_n| t``."""
    return lattice.size * t


@dataclass(frozen=True)
class FssConfig:
    d: int = 3
    n_values: tuple = (1, 2)
    T: float = 0.2
    theta1: int = 1
    theta2: int = 1
    gamma: float = 0.03
    law: OffspringLaw = field(default_factory=binary_critical)
    kappa: float = 1.0
    grid: tuple = DEFAULT_GRID
    replicates: int = 500
    limit_replicates: int = 100_000
    dt: float = DEFAULT_DT
    seed: int = 0
    gap_tolerance: float = DEFAULT_GAP_TOLERANCE
    allow_unproven: bool = False

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        object.__setattr__(self, "grid", tuple((float(a), float(b)) for a, b in self.grid))
        problems = []
        if self.d < 3:
            problems.append(f"d must be >= 3 (the walk must be transient), got {self.d}")
        if not 0 < self.T <= 1:
            problems.append(f"T must lie in (0, 1], got {self.T}")
        if self.theta1 < 0 or self.theta2 < 0 or int(self.theta1) != self.theta1 or int(self.theta2) != self.theta2:
            problems.append("theta1 and theta2 must be non-negative integers")
        if not self.gamma > 0:
            problems.append("gamma must be positive")
        if not self.kappa > 0:
            problems.append("kappa must be positive")
        if not self.n_values or min(self.n_values) < 1:
            problems.append("n_values must be a non-empty list of half-widths >= 1")
        if any(a < 0 or b < 0 for a, b in self.grid):
            problems.append("transform arguments a, b must be non-negative")
        if self.replicates < 1 or self.limit_replicates < 1:
            problems.append("replicate counts must be positive")
        if not self.law.third_moment_finite():
            problems.append("offspring law needs a finite third moment")
        if problems:
            raise FssConfigError("; ".join(problems))
        if not self.allow_unproven and not self.gamma_sigma2 < self.gamma_sigma2_bound:
            raise FssConfigError(
                f"gamma * sigma^2 = {self.gamma_sigma2:.6g} is not below the bound "
                f"{self.gamma_sigma2_bound:.6g}; set allow_unproven to run anyway"
            )

    @property
    def gamma_sigma2(self) -> float:
        return self.gamma * self.law.sigma2

    @property
    def gamma_sigma2_bound(self) -> float:
        return max_gamma_sigma2(green_infinity_zd(self.d, self.kappa))


@dataclass(frozen=True)
class TransformEstimate:
    value: complex
    stderr: float
    replicates: int


def transform_samples(X, Y, a: float, b: float) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    phase = -(X - Y) * (a - b)
    return np.exp(-(X + Y) * (a + b)) * (np.cos(phase) + 1j * np.sin(phase))


def estimate_transform(X, Y, a: float, b: float) -> TransformEstimate:
    if a == 0 and b == 0:
        return TransformEstimate(1 + 0j, 0.0, int(np.size(X)))
    mean, se = complex_mean(transform_samples(X, Y, a, b))
    return TransformEstimate(mean, se, int(np.size(X)))


def rescaled_totals(trajectory: Trajectory, lattice: Lattice, T: float) -> tuple[float, float]:
    """Totals at ``beta_n(T)`` divided by ``|L_n|``."""
    target = beta(lattice, T)
    final = trajectory.final
    slack = 1e-12 * max(1.0, target)
    if final.clock < target - slack:
        raise ValueError(f"trajectory ends at {final.clock}, before beta_n(T) = {target}")
    if final.clock <= target + slack:
        return final.total_xi / lattice.size, final.total_eta / lattice.size
    # trajectory runs past the target: read the totals off the recorded events
    series = total_mass_series(trajectory)
    xi, eta = series[0][1], series[0][2]
    for t, a, b in series:
        if t > target:
            break
        xi, eta = a, b
    return xi / lattice.size, eta / lattice.size


def _particle_totals(index: int, config: FssConfig, n: int) -> tuple[int, int]:
    lattice = Lattice.torus(config.d, n)
    sim = SimConfig(lattice, config.kappa, config.gamma, config.law, beta(lattice, config.T))
    master = derive_replicate_seed(config.seed, n, _FSS_STREAM_DOMAIN)
    system = ParticleSystem(sim, ParticleState.constant(lattice, config.theta1, config.theta2),
                            particle_rng(master, index))
    system.advance(sim.horizon)
    return system.total_xi, system.total_eta


def particle_samples(config: FssConfig, n: int, workers: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Rescaled totals ``(X_n, Y_n)`` for every particle replicate on the half-width ``n`` torus."""
    size = Lattice.torus(config.d, n).size
    totals = replicate_map(partial(_particle_totals, config=config, n=n), range(config.replicates), workers)
    arr = np.asarray(totals, dtype=float).reshape(-1, 2) / size
    return arr[:, 0], arr[:, 1]


def particle_transform(config: FssConfig, n: int, workers: Optional[int] = None) -> dict:
    """Transform estimates over ``config.grid`` from one set of particle replicates."""
    X, Y = particle_samples(config, n, workers)
    return {(a, b): estimate_transform(X, Y, a, b) for a, b in config.grid}


def limit_samples(gamma_tilde: float, theta1: float, theta2: float, T: float, replicates: int,
                  dt: float = DEFAULT_DT, seed: int = 0, batch: int = DEFAULT_BATCH) -> tuple[np.ndarray, np.ndarray]:
    Xs, Ys = [], []
    done, b = 0, 0
    while done < replicates:
        size = min(batch, replicates - done)
        state = integrate_limit(theta1, theta2, gamma_tilde, T, sde_rng(seed, b), size, dt)
        Xs.append(state.X)
        Ys.append(state.Y)
        done += size
        b += 1
    return np.concatenate(Xs), np.concatenate(Ys)


def limit_transform(gamma_tilde: float, theta1: float, theta2: float, T: float,
                    grid: Sequence[tuple[float, float]], replicates: int, dt: float = DEFAULT_DT,
                    seed: int = 0) -> dict:
    X, Y = limit_samples(gamma_tilde, theta1, theta2, T, replicates, dt, seed)
    return {(a, b): estimate_transform(X, Y, a, b) for a, b in grid}


@dataclass(frozen=True)
class FssRow:
    n: int
    a: float
    b: float
    particle: TransformEstimate
    limit: TransformEstimate
    tolerance: float

    @property
    def gap(self) -> complex:
        return self.particle.value - self.limit.value

    @property
    def stderr(self) -> float:
        return math.hypot(self.particle.stderr, self.limit.stderr)

    @property
    def within_tolerance(self) -> bool:
        return abs(self.gap) <= self.tolerance + 3 * self.stderr


@dataclass
class FssReport:
    config: FssConfig
    rows: list
    trend_ok: dict
    # n -> ((mean X_n, stderr), (mean Y_n, stderr)) of the rescaled particle totals
    total_means: dict = field(default_factory=dict)

    def row(self, n: int, a: float, b: float) -> FssRow:
        for r in self.rows:
            if r.n == n and r.a == a and r.b == b:
                return r
        raise KeyError((n, a, b))

    def verdict(self, row: FssRow) -> bool:
        return row.within_tolerance and self.trend_ok[(row.a, row.b)]

    @property
    def passed(self) -> bool:
        return all(self.verdict(r) for r in self.rows)


def gap_trend_ok(rows: Sequence[FssRow]) -> bool:
    """``|gap|`` does not grow from one ``n`` to the next beyond three combined standard errors."""
    rows = sorted(rows, key=lambda r: r.n)
    for prev, cur in zip(rows, rows[1:]):
        if abs(cur.gap) > abs(prev.gap) + 3 * math.hypot(prev.stderr, cur.stderr):
            return False
    return True


def fss_compare(config: FssConfig, workers: Optional[int] = None) -> FssReport:
    limit = limit_transform(config.gamma_sigma2, config.theta1, config.theta2, config.T,
                            config.grid, config.limit_replicates, config.dt, config.seed)
    rows, means = [], {}
    for n in config.n_values:
        X, Y = particle_samples(config, n, workers)
        means[n] = tuple((float(s.mean()), _stderr(s)) for s in (X, Y))
        for a, b in config.grid:
            rows.append(FssRow(n, a, b, estimate_transform(X, Y, a, b), limit[(a, b)], config.gap_tolerance))
    trend = {(a, b): gap_trend_ok([r for r in rows if (r.a, r.b) == (a, b)]) for a, b in config.grid}
    return FssReport(config, rows, trend, means)


def _stderr(samples: np.ndarray) -> float:
    return float(samples.std(ddof=1) / math.sqrt(samples.size)) if samples.size > 1 else 0.0
