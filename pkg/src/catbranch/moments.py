"""Closed-form first and second moments of the torus particle system started
from constant fields ``xi_0 = v``, ``eta_0 = u``.

Kernel values come from the spectral tables in :mod:`catbranch.kernels`, never
from simulation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .kernels import KernelTable


@dataclass(frozen=True)
class MomentQuery:
    table: KernelTable
    t: float
    gamma: float
    sigma2: float
    theta1: int
    theta2: int
    x: tuple = None
    y: tuple = None

    def __post_init__(self):
        if not self.t >= 0:
            raise ValueError(f"t must be non-negative, got {self.t!r}")
        origin = self.table.lattice.origin
        object.__setattr__(self, "x", origin if self.x is None else tuple(self.x))
        object.__setattr__(self, "y", origin if self.y is None else tuple(self.y))

    def swapped(self) -> "MomentQuery":
        """The same query with the roles of the two types exchanged."""
        return MomentQuery(self.table, self.t, self.gamma, self.sigma2,
                           self.theta2, self.theta1, self.x, self.y)

    def _branching(self, z: Sequence[int]) -> float:
        return 0.5 * self.sigma2 * self.gamma * self.theta1 * self.theta2 * self.table.green_t(2 * self.t, z)


def mean_xi(q: MomentQuery) -> float:
    return float(q.theta1)


def mean_eta(q: MomentQuery) -> float:
    return float(q.theta2)


def cross_moment(q: MomentQuery) -> float:
    """``E xi_t(x) eta_t(y)``; the two types are uncorrelated at every pair of sites."""
    return float(q.theta1 * q.theta2)


def second_moment_xi(q: MomentQuery) -> float:
    """``E xi_t(x)^2 = v^2 + sigma^2 gamma u v g_2t(0) / 2 + v (1 - p_2t(0))``."""
    origin = q.table.lattice.origin
    v = q.theta1
    return v * v + q._branching(origin) + v * (1.0 - q.table.p_t(2 * q.t, origin))


def second_moment_eta(q: MomentQuery) -> float:
    return second_moment_xi(q.swapped())


def pair_moment_xi(q: MomentQuery) -> float:
    """``E xi_t(x) xi_t(y)`` for ``x != y``."""
    lat = q.table.lattice
    if lat.wrap(q.x) == lat.wrap(q.y):
        raise ValueError("pair moment needs distinct sites; use second_moment_xi for x == y")
    z = lat.difference(q.x, q.y)
    v = q.theta1
    return v * v - v * q.table.p_t(2 * q.t, z) + q._branching(z)


def pair_moment_eta(q: MomentQuery) -> float:
    return pair_moment_xi(q.swapped())


def variance_xi(q: MomentQuery) -> float:
    return second_moment_xi(q) - mean_xi(q) ** 2
