"""Site geometry for the integer lattice Z^d and the periodic cube [-n, n]^d."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np

Site = Tuple[int, ...]


class LatticeError(ValueError):
    """Raised when a lattice operation is used outside its domain."""


@dataclass(frozen=True)
class Lattice:
    """Nearest-neighbour lattice, either infinite (``half_width is None``) or a torus.

    Torus coordinates live in ``[-n, n]`` so that site labels coincide with the
    usual centred box; arithmetic is modulo ``2n + 1``.
    """

    dimension: int
    half_width: Optional[int] = None

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise LatticeError(f"dimension must be a positive integer, got {self.dimension!r}")
        if self.half_width is not None:
            if int(self.half_width) != self.half_width or self.half_width < 1:
                raise LatticeError(f"torus half-width must be an integer >= 1, got {self.half_width!r}")

    @classmethod
    def torus(cls, dimension: int, half_width: int) -> "Lattice":
        return cls(dimension, half_width)

    @classmethod
    def zd(cls, dimension: int) -> "Lattice":
        return cls(dimension, None)

    @property
    def is_torus(self) -> bool:
        return self.half_width is not None

    @property
    def side(self) -> int:
        """Number of sites along one axis of the torus (``2n + 1``)."""
        self._require_torus("side")
        return 2 * self.half_width + 1

    @property
    def size(self) -> int:
        self._require_torus("size")
        return self.side ** self.dimension

    @property
    def origin(self) -> Site:
        return (0,) * self.dimension

    def _require_torus(self, what: str) -> None:
        if self.half_width is None:
            raise LatticeError(f"{what} is only defined on a torus")

    def contains(self, x: Sequence[int]) -> bool:
        if len(x) != self.dimension:
            return False
        if self.half_width is None:
            return True
        n = self.half_width
        return all(-n <= c <= n for c in x)

    def _check(self, x: Sequence[int]) -> None:
        if not self.contains(x):
            raise LatticeError(f"{tuple(x)!r} is not a site of {self!r}")

    def wrap(self, x: Sequence[int]) -> Site:
        """Reduce integer coordinates into ``[-n, n]`` modulo ``2n + 1``."""
        self._require_torus("wrap")
        if len(x) != self.dimension:
            raise LatticeError(f"expected {self.dimension} coordinates, got {len(x)}")
        n, m = self.half_width, self.side
        return tuple((int(c) + n) % m - n for c in x)

    def neighbors(self, x: Sequence[int]) -> list[Site]:
        """The ``2d`` nearest neighbours, ordered axis 1 (+, -), axis 2 (+, -), ..."""
        self._check(x)
        x = tuple(int(c) for c in x)
        out = []
        for i in range(self.dimension):
            for step in (1, -1):
                y = list(x)
                y[i] += step
                out.append(tuple(y))
        if self.half_width is not None:
            out = [self.wrap(y) for y in out]
        return out

    def site_index(self, x: Sequence[int]) -> int:
        """Lexicographic index of a torus site (first axis most significant)."""
        self._require_torus("site_index")
        self._check(x)
        n, m = self.half_width, self.side
        idx = 0
        for c in x:
            idx = idx * m + (int(c) + n)
        return idx

    def site(self, index: int) -> Site:
        """Inverse of :meth:`site_index`."""
        self._require_torus("site")
        if not 0 <= index < self.size:
            raise LatticeError(f"index {index} out of range for {self.size} sites")
        n, m = self.half_width, self.side
        coords = []
        for _ in range(self.dimension):
            index, r = divmod(index, m)
            coords.append(r - n)
        return tuple(reversed(coords))

    def sites(self) -> list[Site]:
        """All torus sites in index order."""
        self._require_torus("sites")
        n = self.half_width
        return list(itertools.product(range(-n, n + 1), repeat=self.dimension))

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """``(size, 2d)`` array of neighbour indices, in :meth:`neighbors` order."""
        self._require_torus("neighbor_table")
        table = np.empty((self.size, 2 * self.dimension), dtype=np.int64)
        for i, x in enumerate(self.sites()):
            table[i] = [self.site_index(y) for y in self.neighbors(x)]
        table.setflags(write=False)
        return table

    @cached_property
    def coordinates(self) -> np.ndarray:
        """``(size, d)`` integer coordinates in index order."""
        coords = np.array(self.sites(), dtype=np.int64).reshape(self.size, self.dimension)
        coords.setflags(write=False)
        return coords

    def difference(self, x: Sequence[int], y: Sequence[int]) -> Site:
        """``x - y`` taken on the torus."""
        return self.wrap([a - b for a, b in zip(x, y)])

    def generator_matrix(self, kappa: float = 1.0) -> np.ndarray:
        """Dense Q-matrix of the rate-``kappa`` nearest-neighbour walk on the torus."""
        N = self.size
        q = np.zeros((N, N))
        rate = kappa / (2 * self.dimension)
        for i, row in enumerate(self.neighbor_table):
            for j in row:
                q[i, j] += rate
            q[i, i] -= kappa
        return q
