"""Domain types shared by every backend.

Per-particle state lives in flat numpy arrays owned by :class:`ParticleStore`.
Ids are dense integers starting at 1; slot 0 of every array is unused so that
the id doubles as the array index and the partner code ``0`` stays free for
"no partner".
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

# particle modes
ABSENT = 0
EVENT_DRIVEN = 1
TIME_DRIVEN = 2

REACTION_KINDS = ("elastic", "annihilate", "coalesce", "products")


class ModelError(ValueError):
    """Inconsistent species or particle data."""


@dataclass
class Species:
    name: str
    diameter: float
    mass: float = 1.0
    diffusion: float = 0.0
    decay_rate: float = 0.0
    decay_products: tuple = ()
    birth_rate: float = 0.0
    nnl: bool = False


@dataclass
class PairRule:
    """How an interacting pair of species behaves on contact."""

    kind: str = "elastic"
    products: tuple = ()
    cutoff: float | None = None


class SpeciesTable:
    """Species properties plus the symmetric interaction table.

    ``interaction[a, b]`` says whether species a and b see each other at all.
    ``pair_diameter[a, b]`` is the contact distance, negative for
    non-interacting pairs.
    """

    def __init__(self, species, interaction=None, rules=None):
        self.species = list(species)
        ns = len(self.species)
        if ns == 0:
            raise ModelError("at least one species is required")
        if ns > 61:
            raise ModelError("at most 61 species fit in a cell mask word")
        if interaction is None:
            interaction = np.ones((ns, ns), dtype=bool)
        interaction = np.asarray(interaction, dtype=bool)
        if interaction.shape != (ns, ns):
            raise ModelError(f"interaction table must be {ns}x{ns}")
        if not np.array_equal(interaction, interaction.T):
            raise ModelError("interaction table must be symmetric")
        self.interaction = interaction
        self.rules = {}
        for (a, b), rule in (rules or {}).items():
            if rule.kind not in REACTION_KINDS:
                raise ModelError(f"unknown reaction kind {rule.kind!r}")
            key = (min(a, b), max(a, b))
            self.rules[key] = rule
        for sp in self.species:
            if sp.diameter < 0 or sp.mass <= 0 or sp.diffusion < 0:
                raise ModelError(f"species {sp.name}: bad diameter/mass/diffusion")
            if sp.decay_rate < 0 or sp.birth_rate < 0:
                raise ModelError(f"species {sp.name}: rates must be >= 0")
            for p in sp.decay_products:
                if not 0 <= p < ns:
                    raise ModelError(f"species {sp.name}: bad decay product {p}")

        d = np.array([sp.diameter for sp in self.species])
        self.diameter = d
        self.radius = d / 2
        self.mass = np.array([sp.mass for sp in self.species])
        self.diffusion = np.array([sp.diffusion for sp in self.species])
        self.decay_rate = np.array([sp.decay_rate for sp in self.species])
        self.birth_rate = np.array([sp.birth_rate for sp in self.species])
        self.nnl = np.array([sp.nnl for sp in self.species], dtype=bool)
        pd = (d[:, None] + d[None, :]) / 2
        for (a, b), rule in self.rules.items():
            if rule.cutoff is not None:
                pd[a, b] = pd[b, a] = rule.cutoff
        self.pair_diameter = np.where(interaction, pd, -1.0)
        bits = np.zeros(ns, dtype=np.uint64)
        for a in range(ns):
            for b in range(ns):
                if interaction[a, b]:
                    bits[a] |= np.uint64(1) << np.uint64(b)
        self.interaction_bits = bits

    def __len__(self):
        return len(self.species)

    def index(self, name):
        for k, sp in enumerate(self.species):
            if sp.name == name:
                return k
        raise KeyError(name)

    def rule(self, a, b) -> PairRule:
        return self.rules.get((min(a, b), max(a, b)), PairRule())

    def max_pair_diameter(self):
        """Largest contact distance over interacting pairs (0 if none)."""
        v = self.pair_diameter[self.interaction]
        return float(v.max()) if v.size else 0.0


class SimulationClock:
    """Global time, event counter and the single random stream."""

    def __init__(self, seed=0):
        self.t = 0.0
        self.event_count = 0
        self.seed = seed
        self.rng = np.random.Generator(np.random.PCG64(seed))

    def advance(self, t):
        if t < self.t - 1e-12:
            raise RuntimeError(f"time went backwards: {t} < {self.t}")
        self.t = max(self.t, t)

    def save_rng_state(self):
        return self.rng.bit_generator.state

    def restore_rng_state(self, state):
        self.rng.bit_generator.state = state

    def spawn_seed(self):
        """A 63-bit seed for an independent substream."""
        return int(self.rng.integers(0, 2**63 - 1))


@dataclass
class Particle:
    """Read-only snapshot of one particle, built on demand from the store."""

    id: int
    species: int
    position: np.ndarray
    velocity: np.ndarray
    particle_time: float
    cell: int
    mode: int
    event: tuple = field(default=(np.inf, 0, 0))


class ParticleStore:
    """Array-of-fields storage for up to ``capacity`` particles.

    ``pos`` holds unwrapped coordinates at time ``tim``; ``img`` counts how many
    box lengths have been crossed along each periodic axis, so the wrapped
    position is ``pos - img * box``.
    """

    def __init__(self, dim, capacity=16):
        self.dim = dim
        self.capacity = 0
        self.n_alive = 0
        self.high = 0  # largest id ever handed out
        self._free = []
        self.pos = np.zeros((1, dim))
        self.vel = np.zeros((1, dim))
        self.tim = np.zeros(1)
        self.species = np.zeros(1, dtype=np.int64)
        self.mode = np.zeros(1, dtype=np.int64)
        self.img = np.zeros((1, dim), dtype=np.int64)
        self.cell = np.full(1, -1, dtype=np.int64)
        self.grow(capacity)

    _FIELDS = ("pos", "vel", "tim", "species", "mode", "img", "cell")

    def grow(self, capacity):
        """Enlarge all arrays to hold ids 1..capacity."""
        if capacity <= self.capacity:
            return
        for name in self._FIELDS:
            old = getattr(self, name)
            shape = (capacity + 1,) + old.shape[1:]
            fill = -1 if name == "cell" else 0
            new = np.full(shape, fill, dtype=old.dtype)
            new[: old.shape[0]] = old
            setattr(self, name, new)
        self.capacity = capacity

    def allocate(self):
        """Return a fresh id, reusing the smallest freed id first."""
        if self._free:
            i = heapq.heappop(self._free)
        else:
            if self.high == self.capacity:
                raise ModelError("particle store is full; grow() it first")
            self.high += 1
            i = self.high
        self.n_alive += 1
        return i

    def full(self):
        return not self._free and self.high == self.capacity

    def release(self, i):
        if i in self._free:
            raise ModelError(f"particle {i} released twice")
        self.mode[i] = ABSENT
        self.cell[i] = -1
        self.n_alive -= 1
        heapq.heappush(self._free, i)

    def alive(self):
        """Ids of all present particles, ascending."""
        return np.nonzero(self.mode[: self.high + 1] != ABSENT)[0]

    def particle(self, i, event=(np.inf, 0, 0)):
        return Particle(int(i), int(self.species[i]), self.pos[i].copy(), self.vel[i].copy(),
                        float(self.tim[i]), int(self.cell[i]), int(self.mode[i]), event)

    def state_dict(self):
        d = {name: getattr(self, name).copy() for name in self._FIELDS}
        d.update(capacity=self.capacity, n_alive=self.n_alive, high=self.high,
                 free=list(self._free), dim=self.dim)
        return d

    @classmethod
    def from_state(cls, d):
        st = cls(d["dim"], 1)
        for name in cls._FIELDS:
            setattr(st, name, d[name].copy())
        st.capacity = d["capacity"]
        st.n_alive = d["n_alive"]
        st.high = d["high"]
        st._free = list(d["free"])
        return st


def minimum_image(delta, box, periodic):
    """Apply the minimum-image convention along periodic axes."""
    delta = np.array(delta, dtype=float)
    box = np.asarray(box, dtype=float)
    per = np.asarray(periodic, dtype=bool)
    if per.any():
        delta[..., per] -= box[per] * np.round(delta[..., per] / box[per])
    return delta


def overlap_distance(ri, rj, box=None, periodic=None):
    """Distance between two centres, minimum image on periodic axes.

    >>> overlap_distance([0.5, 0, 0], [9.5, 0, 0], box=[10, 10, 10], periodic=[True] * 3)
    1.0
    """
    delta = np.asarray(ri, dtype=float) - np.asarray(rj, dtype=float)
    if box is not None:
        if periodic is None:
            periodic = [True] * len(delta)
        delta = minimum_image(delta, box, periodic)
    return float(np.sqrt(np.dot(delta, delta)))
