"""Event selection of the direct method: Fenwick sampling, category
proportions and exponential holding times."""

import math
import random

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from catbranch.lattice import Lattice
from catbranch.offspring import binary_critical
from catbranch.particles import EventKind, ParticleState, ParticleSystem, SimConfig, _Fenwick


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=40).filter(lambda w: sum(w) > 0))
def test_fenwick_find_inverts_prefix_sums(weights):
    tree = _Fenwick(weights)
    cum = np.cumsum(weights)
    for target in range(sum(weights)):
        assert tree.find(target) == int(np.searchsorted(cum, target, side="right"))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=2, max_size=30), st.data())
def test_fenwick_updates(weights, data):
    tree = _Fenwick(weights)
    w = list(weights)
    for _ in range(10):
        i = data.draw(st.integers(0, len(w) - 1))
        delta = data.draw(st.integers(-w[i], 5))
        tree.add(i, delta)
        w[i] += delta
    if sum(w):
        cum = np.cumsum(w)
        for target in range(sum(w)):
            assert tree.find(target) == int(np.searchsorted(cum, target, side="right"))


def _first_events(reps=20_000):
    lat = Lattice.torus(1, 1)
    cfg = SimConfig(lat, 1.0, 0.1, binary_critical(), 1.0)
    initial = ParticleState.constant(lat, 2, 3)
    kinds, times = [], []
    for seed in range(reps):
        event = ParticleSystem(cfg, initial, random.Random(seed)).step()
        kinds.append(int(event.kind))
        times.append(event.time)
    return np.array(kinds), np.array(times)


def test_first_event_category_and_holding_time():
    # rates: kappa * 6, kappa * 9, gamma * 18, gamma * 18
    rates = np.array([6.0, 9.0, 1.8, 1.8])
    kinds, times = _first_events()
    counts = np.bincount(kinds, minlength=4)
    assert stats.chisquare(counts, rates / rates.sum() * kinds.size).pvalue > 1e-3
    # exponential with the total rate
    assert stats.kstest(times, "expon", args=(0, 1 / rates.sum())).pvalue > 1e-3


def test_branching_site_weighted_by_product():
    lat = Lattice.torus(1, 1)
    cfg = SimConfig(lat, 1e-9, 1.0, binary_critical(), 1.0)
    # products 1*1, 2*3, 0*5: branchings must fall on the first two sites in ratio 1:6
    initial = ParticleState({(-1,): 1, (0,): 2, (1,): 0}, {(-1,): 1, (0,): 3, (1,): 5})
    sites = []
    for seed in range(7000):
        event = ParticleSystem(cfg, initial, random.Random(seed)).step()
        if event.kind in (EventKind.XI_BRANCH, EventKind.ETA_BRANCH):
            sites.append(event.site)
    counts = [sites.count((-1,)), sites.count((0,))]
    assert sites.count((1,)) == 0
    assert stats.chisquare(counts, np.array([1, 6]) / 7 * len(sites)).pvalue > 1e-3


def test_walk_direction_uniform():
    lat = Lattice.zd(2)
    cfg = SimConfig(lat, 1.0, 1.0, binary_critical(), 1.0)
    initial = ParticleState({(0, 0): 1}, {})
    dirs = []
    for seed in range(8000):
        event = ParticleSystem(cfg, initial, random.Random(seed)).step()
        dirs.append(event.detail)
    counts = [dirs.count(y) for y in [(1, 0), (-1, 0), (0, 1), (0, -1)]]
    assert sum(counts) == 8000
    assert stats.chisquare(counts).pvalue > 1e-3


def test_advance_discards_overshoot():
    # a single walker: the number of jumps in [0, t] is Poisson(kappa t)
    lat = Lattice.zd(1)
    cfg = SimConfig(lat, 2.0, 1.0, binary_critical(), 1.5)
    jumps = []
    for seed in range(5000):
        system = ParticleSystem(cfg, ParticleState({(0,): 1}, {}), random.Random(seed))
        system.advance(1.5)
        assert system.clock == 1.5
        jumps.append(sum(system.event_counts))
    jumps = np.array(jumps)
    assert abs(jumps.mean() - 3.0) < 4 * math.sqrt(3.0 / jumps.size)
    assert abs(jumps.var() - 3.0) < 0.3
