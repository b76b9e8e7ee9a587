"""Synchronous n-fold (BKL) hopping for a cluster of time-driven particles."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def species_hop_rates(diffusion, hop):
    """Hop rate of each species: a Gaussian hop with per-axis variance h^2 per event
    must reproduce <dx^2> = 2 D t, hence k_s = 2 D_s / h_s^2 for every particle
    of the species, however many of them there are."""
    diffusion = np.asarray(diffusion, dtype=float)
    hop = np.asarray(hop, dtype=float)
    return np.where(diffusion > 0, 2.0 * diffusion / hop**2, 0.0)


def td_cluster_hop(rng, pos, species, diffusion, hop, t0, until, box=None, periodic=None,
                   on_hop=None, max_hops=10**7):
    """Hop the cluster from t0 until the next hop would pass ``until``.

    ``pos`` (n x d) is modified in place; ``species`` gives each member's
    species index into ``diffusion`` and ``hop``. At every hop one species is
    chosen with probability proportional to its rate and all of its members
    move by an independent Gaussian step of scale ``h_s`` per axis.
    ``on_hop(s, moved_ids)`` is called after each hop (overlap checks and
    reaction dispatch belong there); returning False stops the loop.

    Returns (time reached, hops per species).
    """
    pos = np.asarray(pos)
    species = np.asarray(species)
    rates = species_hop_rates(diffusion, hop)
    present = np.zeros(len(rates), dtype=bool)
    present[np.unique(species)] = True
    rates = np.where(present, rates, 0.0)
    total = rates.sum()
    counts = np.zeros(len(rates), dtype=np.int64)
    t = t0
    if total <= 0:
        return until, counts
    members = [np.nonzero(species == s)[0] for s in range(len(rates))]
    p = rates / total
    for _ in range(max_hops):
        dt = rng.exponential(1.0 / total)
        if t + dt > until:
            return until, counts
        t += dt
        s = int(rng.choice(len(rates), p=p))
        ids = members[s]
        pos[ids] += rng.normal(0.0, hop[s], size=(len(ids), pos.shape[1]))
        if box is not None and periodic is not None:
            per = np.asarray(periodic)
            moved = pos[ids]
            moved[:, per] %= np.asarray(box)[per]
            pos[ids] = moved
        counts[s] += 1
        if on_hop is not None and on_hop(s, ids) is False:
            return t, counts
    return t, counts


@dataclass
class ClusterProtection:
    """A group of close particles hopped synchronously inside their own cubes.

    Member k may move anywhere in the cube of half-width ``half[k]`` centred
    at ``start[k]``; the cubes are disjoint from every other protection, so
    the group evolves independently of the rest of the system. The hop
    sequence is a pure function of ``seed``, which lets an interrupted
    cluster be replayed to any earlier time.
    """

    members: tuple
    t0: float
    start: np.ndarray
    half: np.ndarray
    seed: int
    until: float
    t_end: float = np.inf
    outcome: str = "horizon"
    extra: dict = field(default_factory=dict)
    end_pos: np.ndarray | None = None
    hops: int = 0
