"""Per-replicate random streams derived from one master seed.

Streams come from :class:`numpy.random.SeedSequence` with spawn key
``(domain, index)``: the documented splittable construction, so replicate
streams are statistically independent and a stream depends only on
``(master, domain, index)``, never on scheduling.
"""

from __future__ import annotations

import random

import numpy as np

PARTICLE_DOMAIN = 0
SDE_DOMAIN = 1

SEED_RULE = "numpy.random.SeedSequence(entropy=master, spawn_key=(domain, index)).generate_state(4, uint32) -> 128-bit int"


def derive_replicate_seed(master: int, index: int, domain: int = PARTICLE_DOMAIN) -> int:
    """128-bit stream seed for replicate ``index`` of an experiment seeded with ``master``."""
    if master < 0 or index < 0 or domain < 0:
        raise ValueError("master seed, index and domain must be non-negative")
    words = np.random.SeedSequence(entropy=int(master), spawn_key=(int(domain), int(index))).generate_state(4, np.uint32)
    out = 0
    for w in words:
        out = (out << 32) | int(w)
    return out


def particle_rng(master: int, index: int) -> random.Random:
    return random.Random(derive_replicate_seed(master, index, PARTICLE_DOMAIN))


def sde_rng(master: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_replicate_seed(master, index, SDE_DOMAIN)))
