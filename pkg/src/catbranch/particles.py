"""Exact event-driven simulation of the two-type mutually catalytic branching
particle system.

Every particle of either type jumps at rate ``kappa`` to a uniformly chosen
nearest neighbour. A type-1 particle at ``x`` dies at rate ``gamma * eta(x)``
and is replaced by ``k ~ law`` offspring at ``x``; symmetrically for type 2.
Hence the four event categories have total rates ``kappa * total_xi``,
``kappa * total_eta``, ``gamma * S`` and ``gamma * S`` with
``S = sum_x xi(x) eta(x)``.

Within a category the site is drawn from a Fenwick tree over integer weights
(``xi(x)``, ``eta(x)`` or ``xi(x) eta(x)``), so selection and updates cost
``O(log #slots)`` and the bookkeeping is exact integer arithmetic.
"""

from __future__ import annotations

import enum
import random
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .lattice import Lattice, Site
from .offspring import OffspringLaw

DEFAULT_MAX_EVENTS = 10 ** 9


class EventKind(enum.IntEnum):
    XI_WALK = 0
    ETA_WALK = 1
    XI_BRANCH = 2
    ETA_BRANCH = 3


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: EventKind
    site: Site
    # destination site for walks, offspring count for branchings
    detail: object

    def to_json(self) -> dict:
        detail = list(self.detail) if isinstance(self.detail, tuple) else int(self.detail)
        return {"time": self.time, "kind": self.kind.name, "site": list(self.site), "detail": detail}


class SimulationError(RuntimeError):
    pass


class EventCapExceeded(SimulationError):
    """Raised when a replicate exceeds its event budget; carries the partial trajectory."""

    def __init__(self, message: str, trajectory: "Trajectory"):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class ParticleState:
    """Sparse two-type configuration with cached totals.

    ``xi`` and ``eta`` map sites to positive counts; zero entries are dropped.
    """

    xi: Mapping[Site, int]
    eta: Mapping[Site, int]
    clock: float = 0.0
    total_xi: int = field(init=False)
    total_eta: int = field(init=False)
    interaction_sum: int = field(init=False)

    def __post_init__(self):
        xi = _clean(self.xi, "xi")
        eta = _clean(self.eta, "eta")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "total_xi", sum(xi.values()))
        object.__setattr__(self, "total_eta", sum(eta.values()))
        object.__setattr__(self, "interaction_sum", sum(c * eta.get(x, 0) for x, c in xi.items()))
        if not self.clock >= 0:
            raise ValueError(f"clock must be non-negative, got {self.clock!r}")

    @classmethod
    def empty(cls, lattice: Lattice) -> "ParticleState":
        return cls({}, {})

    @classmethod
    def constant(cls, lattice: Lattice, xi: int, eta: int) -> "ParticleState":
        """``xi(x) = xi`` and ``eta(x) = eta`` at every torus site."""
        sites = lattice.sites()
        return cls({x: xi for x in sites}, {x: eta for x in sites})

    @classmethod
    def point(cls, lattice: Lattice, xi: int = 1, eta: int = 1,
              site: Optional[Sequence[int]] = None) -> "ParticleState":
        """``xi`` and ``eta`` particles stacked at one site (the origin by default)."""
        x = lattice.origin if site is None else tuple(site)
        return cls({x: xi}, {x: eta})

    def xi_at(self, x: Sequence[int]) -> int:
        return self.xi.get(tuple(x), 0)

    def eta_at(self, x: Sequence[int]) -> int:
        return self.eta.get(tuple(x), 0)

    @property
    def both_alive(self) -> bool:
        return self.total_xi > 0 and self.total_eta > 0


def _clean(counts: Mapping, name: str) -> dict:
    out = {}
    for x, c in counts.items():
        c = int(c)
        if c < 0:
            raise ValueError(f"{name} has negative count {c} at {x!r}")
        if c:
            out[tuple(int(v) for v in x)] = c
    return out


@dataclass(frozen=True)
class SimConfig:
    lattice: Lattice
    kappa: float
    gamma: float
    law: OffspringLaw
    horizon: float
    seed: int = 0
    record_trajectory: bool = False
    max_events: int = DEFAULT_MAX_EVENTS

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa!r}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma!r}")
        if not self.horizon >= 0:
            raise ValueError(f"horizon must be non-negative, got {self.horizon!r}")
        if self.max_events < 1:
            raise ValueError("max_events must be positive")


@dataclass
class Trajectory:
    initial: ParticleState
    final: ParticleState
    events: Optional[list]
    event_counts: list
    quiescent: bool

    @property
    def n_events(self) -> int:
        return sum(self.event_counts)

    def summary(self) -> dict:
        return {
            "final_time": self.final.clock,
            "total_xi": self.final.total_xi,
            "total_eta": self.final.total_eta,
            "interaction_sum": self.final.interaction_sum,
            "n_events": self.n_events,
            "n_xi_walk": self.event_counts[EventKind.XI_WALK],
            "n_eta_walk": self.event_counts[EventKind.ETA_WALK],
            "n_xi_branch": self.event_counts[EventKind.XI_BRANCH],
            "n_eta_branch": self.event_counts[EventKind.ETA_BRANCH],
            "quiescent": int(self.quiescent),
        }


class _Fenwick:
    """Binary indexed tree over non-negative integer weights."""

    __slots__ = ("size", "tree", "top")

    def __init__(self, weights: Sequence[int]):
        self.size = len(weights)
        tree = [0] + list(weights)
        for i in range(1, self.size + 1):
            j = i + (i & -i)
            if j <= self.size:
                tree[j] += tree[i]
        self.tree = tree
        top = 1
        while top * 2 <= self.size:
            top *= 2
        self.top = top

    def add(self, i: int, delta: int) -> None:
        tree, size = self.tree, self.size
        i += 1
        while i <= size:
            tree[i] += delta
            i += i & -i

    def find(self, target: int) -> int:
        """Smallest index whose inclusive prefix sum exceeds ``target``."""
        tree, size = self.tree, self.size
        pos = 0
        step = self.top
        while step:
            nxt = pos + step
            if nxt <= size and tree[nxt] <= target:
                pos = nxt
                target -= tree[nxt]
            step >>= 1
        return pos


class ParticleSystem:
    """Mutable simulator state for one replicate.

    Sites are stored in integer slots. On a torus the slot is the site index
    and neighbours come from a precomputed table; on Z^d slots are allocated
    on first occupancy and recycled once both counts return to zero.
    """

    def __init__(self, config: SimConfig, initial: ParticleState, rng: Optional[random.Random] = None):
        self.config = config
        self.lattice = config.lattice
        self._initial = initial
        self.rng = random.Random(config.seed) if rng is None else rng
        self.clock = float(initial.clock)
        self.kappa = float(config.kappa)
        self.gamma = float(config.gamma)
        self._cdf = config.law._cdf
        self._n_dirs = 2 * self.lattice.dimension
        self._torus = self.lattice.is_torus
        self.event_counts = [0, 0, 0, 0]
        self.events: Optional[list] = [] if config.record_trajectory else None
        self.quiescent = False

        if self._torus:
            lat = self.lattice
            for x in list(initial.xi) + list(initial.eta):
                if not lat.contains(x):
                    raise ValueError(f"initial site {x!r} is not in {lat!r}")
            capacity = lat.size
            self._sites = lat.sites()
            self._slot = {x: i for i, x in enumerate(self._sites)}
            self._nbr = [list(map(int, row)) for row in lat.neighbor_table]
            self._free: list = []
        else:
            occupied = sorted(set(initial.xi) | set(initial.eta))
            capacity = max(16, 2 * len(occupied))
            self._sites = occupied + [None] * (capacity - len(occupied))
            self._slot = {x: i for i, x in enumerate(occupied)}
            self._free = list(range(capacity - 1, len(occupied) - 1, -1))
            self._nbr = None
        self._xi = [0] * capacity
        self._eta = [0] * capacity
        for x, c in initial.xi.items():
            self._xi[self._slot[x]] = c
        for x, c in initial.eta.items():
            self._eta[self._slot[x]] = c
        self._rebuild()

    def _rebuild(self) -> None:
        xi, eta = self._xi, self._eta
        self._t_xi = _Fenwick(xi)
        self._t_eta = _Fenwick(eta)
        self._t_prod = _Fenwick([a * b for a, b in zip(xi, eta)])
        self.total_xi = sum(xi)
        self.total_eta = sum(eta)
        self.interaction_sum = sum(a * b for a, b in zip(xi, eta))

    def _grow(self) -> None:
        old = len(self._xi)
        new = 2 * old
        self._sites.extend([None] * (new - old))
        self._xi.extend([0] * (new - old))
        self._eta.extend([0] * (new - old))
        self._free = list(range(new - 1, old - 1, -1))
        self._rebuild()

    def _neighbor_slot(self, i: int, direction: int) -> int:
        if self._torus:
            return self._nbr[i][direction]
        x = self._sites[i]
        axis, sign = divmod(direction, 2)
        y = list(x)
        y[axis] += -1 if sign else 1
        y = tuple(y)
        j = self._slot.get(y)
        if j is None:
            j = self._free.pop()
            self._sites[j] = y
            self._slot[y] = j
        return j

    def _release(self, i: int) -> None:
        if not self._torus and self._xi[i] == 0 and self._eta[i] == 0:
            x = self._sites[i]
            del self._slot[x]
            self._sites[i] = None
            self._free.append(i)

    def total_rate(self) -> float:
        return self.kappa * (self.total_xi + self.total_eta) + 2.0 * self.gamma * self.interaction_sum

    def _fire(self, time: float, want_record: bool = False) -> EventRecord | None:
        """Choose and apply one event at ``time``."""
        rng = self.rng
        walk_xi = self.kappa * self.total_xi
        walk_eta = self.kappa * self.total_eta
        branch = self.gamma * self.interaction_sum
        u = rng.random() * (walk_xi + walk_eta + 2.0 * branch)
        if u < walk_xi:
            kind = EventKind.XI_WALK
        elif u < walk_xi + walk_eta or not branch:
            kind = EventKind.ETA_WALK
        elif u < walk_xi + walk_eta + branch:
            kind = EventKind.XI_BRANCH
        else:
            kind = EventKind.ETA_BRANCH
        record = want_record or self.events is not None

        if kind <= EventKind.ETA_WALK:
            if not self._torus and not self._free:
                # a walk may need one fresh slot; growing rebuilds the trees, so do it first
                self._grow()
            if kind == EventKind.XI_WALK:
                mover, other, t_mover, total = self._xi, self._eta, self._t_xi, self.total_xi
            else:
                mover, other, t_mover, total = self._eta, self._xi, self._t_eta, self.total_eta
            i = t_mover.find(rng.randrange(total))
            j = self._neighbor_slot(i, rng.randrange(self._n_dirs))
            mover[i] -= 1
            mover[j] += 1
            t_mover.add(i, -1)
            t_mover.add(j, 1)
            oi, oj = other[i], other[j]
            if oi:
                self._t_prod.add(i, -oi)
            if oj:
                self._t_prod.add(j, oj)
            self.interaction_sum += oj - oi
            if record:
                site, detail = self._sites[i], self._sites[j]
            self._release(i)
        else:
            i = self._t_prod.find(rng.randrange(self.interaction_sum))
            k = bisect_right(self._cdf, rng.random())
            delta = k - 1
            if kind == EventKind.XI_BRANCH:
                counts, t_counts, partner = self._xi, self._t_xi, self._eta[i]
                self.total_xi += delta
            else:
                counts, t_counts, partner = self._eta, self._t_eta, self._xi[i]
                self.total_eta += delta
            if delta:
                counts[i] += delta
                t_counts.add(i, delta)
                self._t_prod.add(i, delta * partner)
                self.interaction_sum += delta * partner
            if record:
                site, detail = self._sites[i], k
            self._release(i)
        self.event_counts[kind] += 1
        if not record:
            return None
        event = EventRecord(time, kind, site, detail)
        if self.events is not None:
            self.events.append(event)
        return event

    def step(self) -> EventRecord | None:
        """Advance by exactly one event; ``None`` means the system is frozen (zero total rate)."""
        rate = self.total_rate()
        if rate <= 0.0:
            self.quiescent = True
            return None
        self._check_cap()
        self.clock += self.rng.expovariate(rate)
        return self._fire(self.clock, want_record=True)

    def advance(self, until: float, stop_on_extinction: bool = False) -> None:
        """Run events up to time ``until``; the overshooting waiting time is discarded (memorylessness).

        With ``stop_on_extinction`` the run also stops, clock untouched, as soon
        as either population is empty.
        """
        rng = self.rng
        kappa, two_gamma = self.kappa, 2.0 * self.gamma
        cap = self.config.max_events
        counts = self.event_counts
        while True:
            if stop_on_extinction and not (self.total_xi and self.total_eta):
                return
            rate = kappa * (self.total_xi + self.total_eta) + two_gamma * self.interaction_sum
            if rate <= 0.0:
                self.quiescent = True
                self.clock = max(self.clock, until)
                return
            t = self.clock + rng.expovariate(rate)
            if t > until:
                self.clock = until
                return
            if counts[0] + counts[1] + counts[2] + counts[3] >= cap:
                self._cap_exceeded()
            self.clock = t
            self._fire(t)

    def _check_cap(self) -> None:
        if sum(self.event_counts) >= self.config.max_events:
            self._cap_exceeded()

    def _cap_exceeded(self):
        raise EventCapExceeded(
            f"event cap of {self.config.max_events} reached at t={self.clock:.6g}",
            self.trajectory(),
        )

    @property
    def state(self) -> ParticleState:
        xi = {self._sites[i]: c for i, c in enumerate(self._xi) if c}
        eta = {self._sites[i]: c for i, c in enumerate(self._eta) if c}
        return ParticleState(xi, eta, self.clock)

    def count_at(self, x: Sequence[int]) -> tuple[int, int]:
        i = self._slot.get(tuple(x))
        if i is None:
            return 0, 0
        return self._xi[i], self._eta[i]

    def field_arrays(self) -> tuple[list, list]:
        """Per-site counts in site-index order (torus only)."""
        if not self._torus:
            raise ValueError("field arrays are only available on a torus")
        return list(self._xi), list(self._eta)

    def trajectory(self, initial: Optional[ParticleState] = None) -> Trajectory:
        return Trajectory(
            initial=self._initial if initial is None else initial,
            final=self.state,
            events=list(self.events) if self.events is not None else None,
            event_counts=list(self.event_counts),
            quiescent=self.quiescent,
        )


def step(state: ParticleState, config: SimConfig, rng: random.Random):
    """Functional single step: ``(new_state, event)`` or ``None`` when no event can occur."""
    system = ParticleSystem(config, state, rng)
    event = system.step()
    if event is None:
        return None
    return system.state, event


def run(config: SimConfig, initial: ParticleState, rng: Optional[random.Random] = None) -> Trajectory:
    """Simulate from ``initial`` until ``config.horizon`` (absolute time) or until frozen."""
    system = ParticleSystem(config, initial, rng)
    system.advance(config.horizon)
    return system.trajectory()


@dataclass(frozen=True)
class CoexistenceRecord:
    xi_alive: bool
    eta_alive: bool
    # first time either total hit zero, None if both survived the horizon
    extinction_time: Optional[float]
    n_events: int = 0

    def both_alive_at(self, t: float) -> bool:
        """Whether both types are alive at time ``t`` (valid for ``t`` up to the trial horizon)."""
        return self.extinction_time is None or self.extinction_time > t


def coexistence_trial(config: SimConfig, initial: ParticleState, horizon: Optional[float] = None,
                      rng: Optional[random.Random] = None) -> CoexistenceRecord:
    """Run on Z^d until ``horizon`` or until one type dies out.

    Once a type is extinct there is no more branching, so the survivor's total
    is frozen and the outcome at the horizon is already decided; the run stops
    there.
    """
    if config.lattice.is_torus:
        raise ValueError("coexistence trials run on the infinite lattice Z^d")
    horizon = config.horizon if horizon is None else horizon
    if not initial.both_alive:
        return CoexistenceRecord(initial.total_xi > 0, initial.total_eta > 0, initial.clock, 0)
    system = ParticleSystem(config, initial, rng)
    system.advance(horizon, stop_on_extinction=True)
    both = system.total_xi > 0 and system.total_eta > 0
    return CoexistenceRecord(
        xi_alive=system.total_xi > 0,
        eta_alive=system.total_eta > 0,
        extinction_time=None if both else system.clock,
        n_events=sum(system.event_counts),
    )


def total_mass_series(trajectory: Trajectory) -> list[tuple[float, int, int]]:
    """``(t, total_xi, total_eta)`` at time zero and after every event of a recorded trajectory."""
    if trajectory.events is None:
        raise ValueError("trajectory was not recorded; set record_trajectory=True")
    xi, eta = trajectory.initial.total_xi, trajectory.initial.total_eta
    series = [(trajectory.initial.clock, xi, eta)]
    for event in trajectory.events:
        if event.kind == EventKind.XI_BRANCH:
            xi += event.detail - 1
        elif event.kind == EventKind.ETA_BRANCH:
            eta += event.detail - 1
        series.append((event.time, xi, eta))
    return series
