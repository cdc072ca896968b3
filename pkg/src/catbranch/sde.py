"""Euler-Maruyama integration of the Dawson-Perkins system on a torus and of
its two-dimensional limit diffusion.

The scheme is full truncation: coefficients are evaluated at the non-negative
part of the state and the result is clipped at zero. The mass added by
clipping is accumulated in ``clipped_mass`` as a step-size diagnostic.

All arrays may carry leading batch axes; the last axis of a field indexes
torus sites.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .kernels import KernelTable
from .seeding import sde_rng

DEFAULT_DT = 1e-3
DEFAULT_BATCH = 10_000


class StabilityError(ValueError):
    pass


@dataclass(frozen=True)
class FieldPair:
    u: np.ndarray
    v: np.ndarray
    clock: float = 0.0
    clipped_mass: float = 0.0

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if u.shape != v.shape:
            raise ValueError(f"u and v shapes differ: {u.shape} vs {v.shape}")
        if np.any(u < 0) or np.any(v < 0):
            raise ValueError("fields must be non-negative")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    def totals(self) -> tuple[np.ndarray, np.ndarray]:
        return self.u.sum(axis=-1), self.v.sum(axis=-1)


@dataclass(frozen=True)
class DiffusionPair:
    X: np.ndarray
    Y: np.ndarray
    clock: float = 0.0
    clipped_mass: float = 0.0

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if np.any(X < 0) or np.any(Y < 0):
            raise ValueError("X and Y must be non-negative")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)


def apply_generator(table: KernelTable, f: np.ndarray) -> np.ndarray:
    """``(Q f)(x) = kappa (mean of f over the 2d neighbours - f(x))``."""
    nbr = table.lattice.neighbor_table
    return table.kappa * (f[..., nbr].mean(axis=-1) - f)


def _check_step(dt: float, kappa: float = 0.0) -> None:
    if not dt > 0:
        raise StabilityError(f"dt must be positive, got {dt!r}")
    if kappa * dt >= 1.0:
        raise StabilityError(f"kappa * dt = {kappa * dt:g} >= 1; the explicit drift step is unstable")


def dp_step(state: FieldPair, table: KernelTable, gamma_tilde: float, dt: float,
            rng: np.random.Generator) -> FieldPair:
    """One full-truncation Euler step of the torus Dawson-Perkins system."""
    _check_step(dt, table.kappa)
    if gamma_tilde < 0:
        raise ValueError("gamma_tilde must be non-negative")
    u = np.maximum(state.u, 0.0)
    v = np.maximum(state.v, 0.0)
    un = u + dt * apply_generator(table, u)
    vn = v + dt * apply_generator(table, v)
    if gamma_tilde > 0:
        scale = np.sqrt(gamma_tilde * u * v * dt)
        un = un + scale * rng.standard_normal(u.shape)
        vn = vn + scale * rng.standard_normal(v.shape)
    clipped = float(-np.minimum(un, 0.0).sum() - np.minimum(vn, 0.0).sum())
    return FieldPair(np.maximum(un, 0.0), np.maximum(vn, 0.0), state.clock + dt,
                     state.clipped_mass + clipped)


def limit_diffusion_step(state: DiffusionPair, gamma_tilde: float, dt: float,
                         rng: np.random.Generator) -> DiffusionPair:
    """One full-truncation Euler step of ``dX = sqrt(g X Y) dw1``, ``dY = sqrt(g X Y) dw2``."""
    _check_step(dt)
    X = np.maximum(state.X, 0.0)
    Y = np.maximum(state.Y, 0.0)
    if gamma_tilde == 0:
        return replace(state, clock=state.clock + dt)
    scale = np.sqrt(gamma_tilde * X * Y * dt)
    Xn = X + scale * rng.standard_normal(X.shape)
    Yn = Y + scale * rng.standard_normal(Y.shape)
    clipped = float(-np.minimum(Xn, 0.0).sum() - np.minimum(Yn, 0.0).sum())
    return DiffusionPair(np.maximum(Xn, 0.0), np.maximum(Yn, 0.0), state.clock + dt,
                         state.clipped_mass + clipped)


def _n_steps(t: float, dt: float) -> tuple[int, float]:
    """Number of steps and the adjusted step so that ``steps * step == t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return 0, dt
    steps = max(1, math.ceil(t / dt - 1e-9))
    return steps, t / steps


def integrate_dp(u0, v0, table: KernelTable, gamma_tilde: float, t: float,
                 rng: np.random.Generator, replicates: int = 1, dt: float = DEFAULT_DT) -> FieldPair:
    """Independent paths from ``(u0, v0)`` to time ``t``; result has shape ``(replicates, |L|)``."""
    u0 = np.asarray(u0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    state = FieldPair(np.broadcast_to(u0, (replicates,) + u0.shape).copy(),
                      np.broadcast_to(v0, (replicates,) + v0.shape).copy())
    steps, h = _n_steps(t, dt)
    _check_step(h, table.kappa)
    for _ in range(steps):
        state = dp_step(state, table, gamma_tilde, h, rng)
    return replace(state, clock=t)


def integrate_limit(theta1: float, theta2: float, gamma_tilde: float, t: float,
                    rng: np.random.Generator, replicates: int = 1, dt: float = DEFAULT_DT) -> DiffusionPair:
    state = DiffusionPair(np.full(replicates, float(theta1)), np.full(replicates, float(theta2)))
    steps, h = _n_steps(t, dt)
    for _ in range(steps):
        state = limit_diffusion_step(state, gamma_tilde, h, rng)
    return replace(state, clock=t)


def duality_functional(phi, psi, utilde, vtilde) -> np.ndarray | complex:
    """``exp(-<phi + psi, ut + vt> - i <phi - psi, ut - vt>)``, reduced over the last axis."""
    phi, psi = np.asarray(phi, dtype=float), np.asarray(psi, dtype=float)
    ut, vt = np.asarray(utilde, dtype=float), np.asarray(vtilde, dtype=float)
    real = -((phi + psi) * (ut + vt)).sum(axis=-1)
    imag = -((phi - psi) * (ut - vt)).sum(axis=-1)
    out = np.exp(real) * (np.cos(imag) + 1j * np.sin(imag))
    return complex(out) if np.ndim(out) == 0 else out


def complex_mean(samples: np.ndarray) -> tuple[complex, float]:
    """Sample mean and its standard error (root of the summed real and imaginary variances)."""
    samples = np.asarray(samples)
    m = samples.size
    mean = complex(samples.mean())
    if m < 2:
        return mean, 0.0
    var = samples.real.var(ddof=1) + samples.imag.var(ddof=1)
    return mean, float(math.sqrt(var / m))


@dataclass(frozen=True)
class DualityResult:
    lhs: complex
    rhs: complex
    lhs_stderr: float
    rhs_stderr: float
    replicates: int
    clipped_mass: float = 0.0

    @property
    def stderr(self) -> float:
        return math.hypot(self.lhs_stderr, self.rhs_stderr)

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)


def analytic_duality(table: KernelTable, u0, v0, ut0, vt0, t: float) -> tuple[complex, complex]:
    """Both sides of the self-duality identity with branching switched off (exact semigroup)."""
    lhs = duality_functional(table.semigroup(t, u0), table.semigroup(t, v0), ut0, vt0)
    rhs = duality_functional(u0, v0, table.semigroup(t, ut0), table.semigroup(t, vt0))
    return complex(lhs), complex(rhs)


def self_duality_check(table: KernelTable, gamma_tilde: float, u0, v0, ut0, vt0, t: float,
                       replicates: int, dt: float = DEFAULT_DT, seed: int = 0,
                       batch: int = DEFAULT_BATCH) -> DualityResult:
    """Monte Carlo estimates of ``E H(u_t, v_t, ut_0, vt_0)`` and ``E H(u_0, v_0, ut_t, vt_t)``.

    The two sides use independent paths. Paths are generated in batches, each
    batch with its own derived stream (left side even batch indices, right
    side odd), so the result depends only on ``seed`` and ``batch``.
    """
    u0, v0, ut0, vt0 = (np.asarray(a, dtype=float) for a in (u0, v0, ut0, vt0))
    if t == 0:
        h = duality_functional(u0, v0, ut0, vt0)
        return DualityResult(complex(h), complex(h), 0.0, 0.0, replicates)
    lhs_samples, rhs_samples = [], []
    clipped = 0.0
    done, b = 0, 0
    while done < replicates:
        size = min(batch, replicates - done)
        left = integrate_dp(u0, v0, table, gamma_tilde, t, sde_rng(seed, 2 * b), size, dt)
        right = integrate_dp(ut0, vt0, table, gamma_tilde, t, sde_rng(seed, 2 * b + 1), size, dt)
        lhs_samples.append(duality_functional(left.u, left.v, ut0, vt0))
        rhs_samples.append(duality_functional(u0, v0, right.u, right.v))
        clipped += left.clipped_mass + right.clipped_mass
        done += size
        b += 1
    lhs, lhs_se = complex_mean(np.concatenate(lhs_samples))
    rhs, rhs_se = complex_mean(np.concatenate(rhs_samples))
    return DualityResult(lhs, rhs, lhs_se, rhs_se, replicates, clipped)
