"""Critical offspring laws with finite support."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

_TOL = 1e-12


class OffspringLawError(ValueError):
    pass


class CriticalityError(OffspringLawError):
    pass


@dataclass(frozen=True)
class OffspringLaw:
    """Probability vector ``probs[k] = P(Z = k)`` with ``E Z = 1``.

    ``sigma2`` is the variance of ``Z`` and ``mu3`` the third absolute central
    moment, both cached at construction.
    """

    probs: tuple
    sigma2: float = field(init=False)
    mu3: float = field(init=False)
    _cdf: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise OffspringLawError("probs must be a non-empty vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise OffspringLawError(f"probs must be finite and non-negative, got {self.probs!r}")
        total = p.sum()
        if abs(total - 1.0) > _TOL:
            raise OffspringLawError(f"probs sum to {total!r}, not 1")
        k = np.arange(p.size)
        mean = float(k @ p)
        if abs(mean - 1.0) > _TOL:
            raise CriticalityError(f"offspring mean is {mean!r}; a critical law needs mean 1")
        object.__setattr__(self, "probs", tuple(float(v) for v in p))
        object.__setattr__(self, "sigma2", float(((k - 1.0) ** 2) @ p))
        object.__setattr__(self, "mu3", float((np.abs(k - 1.0) ** 3) @ p))
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        object.__setattr__(self, "_cdf", tuple(cdf.tolist()))

    @property
    def max_offspring(self) -> int:
        return len(self.probs) - 1

    @property
    def is_trivial(self) -> bool:
        """True when every particle has exactly one child, so branching changes nothing."""
        return self.sigma2 == 0.0

    def sample(self, rng) -> int:
        """One draw; ``rng`` needs a ``random()`` method (``random.Random`` or a numpy Generator)."""
        return bisect.bisect_right(self._cdf, rng.random())

    def sample_many(self, rng: np.random.Generator, size) -> np.ndarray:
        u = rng.random(size)
        return np.searchsorted(np.asarray(self._cdf), u, side="right")

    def third_moment_finite(self) -> bool:
        # finite support makes every moment finite
        return bool(np.isfinite(sum(k ** 3 * p for k, p in enumerate(self.probs))))


def make_law(probs: Sequence[float]) -> OffspringLaw:
    return OffspringLaw(tuple(probs))


def sample_offspring(law: OffspringLaw, rng) -> int:
    return law.sample(rng)


def third_moment_finite(law: OffspringLaw) -> bool:
    return law.third_moment_finite()


def binary_critical() -> OffspringLaw:
    """Zero or two offspring with equal probability (variance 1)."""
    return OffspringLaw((0.5, 0.0, 0.5))


def trinomial(p: float) -> OffspringLaw:
    """``(p/2, 1 - p, p/2)``: variance ``p``, so the variance is a free knob in ``[0, 1]``."""
    if not 0.0 <= p <= 1.0:
        raise OffspringLawError(f"trinomial parameter must lie in [0, 1], got {p!r}")
    return OffspringLaw((p / 2, 1.0 - p, p / 2))


LawSpec = Union[str, Sequence[float], dict]


def law_from_spec(spec: LawSpec) -> OffspringLaw:
    """Build a law from a config value.

    Accepts an explicit probability vector, the name ``"binary-critical"``,
    ``"trinomial(p)"`` or ``{"trinomial": p}``.
    """
    if isinstance(spec, OffspringLaw):
        return spec
    if isinstance(spec, str):
        name = spec.strip().lower()
        if name == "binary-critical":
            return binary_critical()
        if name.startswith("trinomial(") and name.endswith(")"):
            return trinomial(float(name[len("trinomial("):-1]))
        raise OffspringLawError(f"unknown named law {spec!r}")
    if isinstance(spec, dict):
        if set(spec) == {"trinomial"}:
            return trinomial(float(spec["trinomial"]))
        if set(spec) == {"probs"}:
            return make_law(spec["probs"])
        raise OffspringLawError(f"unrecognised law spec {spec!r}")
    return make_law(spec)
