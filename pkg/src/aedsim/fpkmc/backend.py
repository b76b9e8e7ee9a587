"""Asynchronous first-passage kinetic Monte Carlo for diffusing hard spheres.

Each particle is in one of three protection states:

* unprotected: its region is its own core; it is queued for an immediate
  rebuild ``(t, P_BOUNDARY, 0)`` or update ``(t, 0, -1)``;
* single: a cube of half-width ``a`` for the centre (``a + R`` with the core)
  centred where the particle stood at ``tim``;
* pair: member of a :class:`PairProtection`, queued with the shared pair
  event ``(t, partner, nu)``;
* cluster: member of a :class:`ClusterProtection`, a group of particles too
  close for cubes or pairs that hops synchronously; every member is queued
  with ``(t_end, next member, CLUSTER_END)``.

Stored positions are only meaningful at ``tim``. Whenever another particle
needs the true position earlier than the scheduled event, the protection is
sampled with the no-passage propagator and destroyed.

Queue qualifiers
    single: ``(t, P_BOUNDARY, 0)`` exit or rebuild, ``(t, i, 1)`` decay,
    ``(t, 0, -1)`` update after insertion.
    pair:   ``(t, j, PAIR_COLLIDE | PAIR_DISSOLVE | PAIR_CM_EXIT | PAIR_DECAY)``.
    cluster: ``(t, j, CLUSTER_END)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..events import EXT_BIRTH, P_BOUNDARY, P_INVALID
from ..model import ABSENT, minimum_image
from ..spatial import BIT_B, BIT_E, OPEN, PERIODIC
from .cluster import ClusterProtection, td_cluster_hop
from .pair import WALK_INNER, WALK_OUTER, WALK_RUNNING, PairProtection, WalkStream, walk
from .propagators import CubeSampler

log = logging.getLogger("aedsim.fpkmc")

NONE, SINGLE, PAIR, CLUSTER = 0, 1, 2, 3
PAIR_COLLIDE, PAIR_DISSOLVE, PAIR_CM_EXIT, PAIR_DECAY = 1, 2, 3, 4
CLUSTER_END = 5
SINGLE_DECAY = 1


class FPKMCError(RuntimeError):
    pass


@dataclass
class FpkmcParams:
    mu_p: float = 1.5
    mu_p_max: float = 5.0
    theta_pair: float = 0.1
    h_hop: float = 0.05
    max_hops: int = 10**6
    check_every: int = 1000
    max_birth_tries: int = 100
    h_cluster: float = 0.1
    max_cluster: int = 16

    def __post_init__(self):
        if self.mu_p <= 1 or self.mu_p_max < self.mu_p:
            raise ValueError("need 1 < mu_p <= mu_p_max")
        if not 0 < self.h_hop < 1:
            raise ValueError("h_hop must be in (0, 1)")
        if self.theta_pair < 0:
            raise ValueError("theta_pair must be >= 0")
        if not 0 < self.h_cluster < 1 or self.max_cluster < 2:
            raise ValueError("need 0 < h_cluster < 1 and max_cluster >= 2")


def fpkmc_cell_size(species, params=None):
    """Cell size that lets a 3^d search see every protection that could block."""
    params = params or FpkmcParams()
    r = float(species.radius.max())
    single = params.mu_p_max * r
    pair = params.mu_p * 2 * r + 2 * r
    return 2 * max(single, pair)


class FPKMCBackend:
    name = "fpkmc"

    def __init__(self, sim, params=None):
        self.sim = sim
        self.params = params or FpkmcParams()
        g = sim.grid
        for ax in range(sim.dim):
            for side in (0, 1):
                if g.kinds[ax, side] not in (PERIODIC, OPEN):
                    raise FPKMCError("the diffusion backend supports periodic and open faces only")
        per_box = g.box[g.periodic]
        self.hcap = float(min(g.csize.min() / 2, 0.45 * per_box.min() if len(per_box) else np.inf))
        self.capacity = 0
        self.kind = np.zeros(1, dtype=np.int8)
        self.center = np.zeros((1, sim.dim))
        self.half = np.zeros(1)
        self.t_exit = np.full(1, np.inf)
        self.exit_axis = np.zeros(1, dtype=np.int64)
        self.exit_side = np.zeros(1, dtype=np.int64)
        self.pair_of = {}
        self.cluster_of = {}
        self._failed = {}
        self.stats = {k: 0 for k in (
            "collisions", "reactions", "decays", "births", "deaths", "single_exits",
            "rebuilds", "pairs", "pair_dissolved", "pair_cm_exits", "pair_interrupted",
            "single_interrupted", "hops", "replays", "disjoint_checks",
            "disjoint_violations", "overlaps", "degenerate", "clusters", "cluster_hops",
            "events")}
        self.pack()

    # ------------------------------------------------------------ plumbing
    @property
    def rng(self):
        return self.sim.clock.rng

    @property
    def sampler(self):
        return CubeSampler(self.sim.clock.rng)

    def pack(self):
        cap = self.sim.store.capacity
        if cap <= self.capacity:
            return
        n = cap + 1
        d = self.sim.dim

        def grow(a, fill, shape):
            new = np.full(shape, fill, dtype=a.dtype)
            new[: a.shape[0]] = a
            return new

        self.kind = grow(self.kind, NONE, n)
        self.center = grow(self.center, 0.0, (n, d))
        self.half = grow(self.half, 0.0, n)
        self.t_exit = grow(self.t_exit, np.inf, n)
        self.exit_axis = grow(self.exit_axis, 0, n)
        self.exit_side = grow(self.exit_side, 0, n)
        self.capacity = cap

    def positions_at(self, ids, t):
        return self.sim.store.pos[ids].copy()

    def cell_positions(self, ids):
        st, g = self.sim.store, self.sim.grid
        p = st.pos[ids].copy()
        p[:, g.periodic] -= st.img[ids][:, g.periodic] * g.box[g.periodic]
        return p

    def _mi(self, delta):
        return minimum_image(np.asarray(delta, dtype=float), self.sim.grid.box, self.sim.grid.periodic)

    def _radius(self, i):
        return float(self.sim.species.radius[self.sim.store.species[i]])

    def _diff(self, i):
        return float(self.sim.species.diffusion[self.sim.store.species[i]])

    def _interacts(self, i, j):
        sp, s = self.sim.species, self.sim.store.species
        return bool(sp.interaction[s[i], s[j]])

    def _contact(self, i, j):
        s = self.sim.store.species
        return float(self.sim.species.pair_diameter[s[i], s[j]])

    def region(self, i):
        """(centre, half-width) of the cube that bounds i's protection."""
        k = self.kind[i]
        if k == SINGLE:
            return self.center[i], self.half[i] + self._radius(i)
        if k == PAIR:
            pp = self.pair_of[i]
            return pp.R0, pp.half_width
        if k == CLUSTER:
            return self.center[i], self.half[i] + self._radius(i)
        return self.sim.store.pos[i], self._radius(i)

    def group(self, i):
        """Particles whose protection is destroyed together with i's."""
        if self.kind[i] == PAIR:
            return self.pair_of[i].members
        if self.kind[i] == CLUSTER:
            return self.cluster_of[i].members
        return (int(i),)

    def _nearby(self, point, exclude=()):
        """Interacting-or-not particle ids in the 3^d cells around a point."""
        g, st = self.sim.grid, self.sim.store
        w, _ = g.wrap(np.asarray(point, dtype=float))
        c = g.locate_cell(w)
        out = []
        for cn in sorted(set(g.neighbor_cells(c))):
            for j in g.members(cn):
                if j not in exclude:
                    out.append(j)
        return out

    def _relocate(self, ids):
        ids = [int(i) for i in ids]
        if ids:
            self.sim.relocate(ids)

    def _queue_rebuild(self, i, t):
        q = self.sim.queue
        q.discard(i)
        q.schedule(int(i), t, P_BOUNDARY, 0)

    # ------------------------------------------------------------ propagation
    def propagate(self, i, t):
        """Sample i's position at t from its protection and destroy the protection."""
        k = self.kind[i]
        if k == SINGLE:
            self._propagate_single(i, t)
        elif k == PAIR:
            self._propagate_pair(self.pair_of[i], t)
        elif k == CLUSTER:
            self._propagate_cluster(self.cluster_of[i], t)

    def _propagate_single(self, i, t, interrupted=True):
        st = self.sim.store
        dt = t - st.tim[i]
        if dt > 0:
            disp = self.sampler.no_passage(self.half[i], self._diff(i), dt, self.sim.dim)
            st.pos[i] = self.center[i] + disp
        st.tim[i] = t
        self.kind[i] = NONE
        self.t_exit[i] = np.inf
        self.stats["single_interrupted"] += int(interrupted)
        self._relocate([i])

    def _pair_state_at(self, pp, t, cm_exit=False, use_walk_end=False):
        """(R, r) of a pair at t; the difference walker is replayed when needed."""
        el = t - pp.t0
        d = self.sim.dim
        if cm_exit:
            R = pp.R0 + self.sampler.exit_point(pp.a_cm, pp.D_cm, el, d, pp.cm_axis, pp.cm_side)
        else:
            R = pp.R0 + self.sampler.no_passage(pp.a_cm, pp.D_cm, el, d)
        if use_walk_end:
            return R, pp.walk_end.copy()
        hops = int(np.floor(el / pp.tau)) if pp.tau > 0 else 0
        hops = min(hops, pp.walk_hops)
        if hops >= pp.walk_hops:
            hops = max(pp.walk_hops - 1, 0)
        _, _, r = pp.replay(hops, self.params.max_hops)
        self.stats["replays"] += 1
        return R, r

    def _set_pair_positions(self, pp, R, r, t):
        st = self.sim.store
        ri, rj = pp.positions(R, r)
        st.pos[pp.i] = ri
        st.pos[pp.j] = rj
        st.tim[pp.i] = st.tim[pp.j] = t
        for m in pp.members:
            self.kind[m] = NONE
            self.pair_of.pop(m, None)
        self._relocate(pp.members)

    def _propagate_pair(self, pp, t):
        q = self.sim.queue
        R, r = self._pair_state_at(pp, t)
        self._set_pair_positions(pp, R, r, t)
        for m in pp.members:
            q.discard(m)
        self.stats["pair_interrupted"] += 1

    # ------------------------------------------------------------ protection
    def _limits(self, point, own_min, exclude, who):
        """Largest half-width of a cube at ``point`` disjoint from nearby regions.

        Unprotected particles get half of the free gap so they can protect
        themselves afterwards. Returns (limit, blocking id or -1); ties go to
        the first candidate in cell order.
        """
        ids = np.array(self._nearby(point, exclude), dtype=np.int64)
        if not len(ids):
            return np.inf, -1
        st, sp = self.sim.store, self.sim.species
        who = np.asarray(who, dtype=np.int64)
        inter = sp.interaction[np.ix_(st.species[who], st.species[ids])].any(axis=0)
        ids = ids[inter]
        if not len(ids):
            return np.inf, -1
        kind = self.kind[ids]
        rad = sp.radius[st.species[ids]]
        cube = (kind == SINGLE) | (kind == CLUSTER)
        c = np.where(cube[:, None], self.center[ids], st.pos[ids])
        h = np.where(cube, self.half[ids] + rad, rad)
        for k in np.nonzero(kind == PAIR)[0]:
            pp = self.pair_of[int(ids[k])]
            c[k], h[k] = pp.R0, pp.half_width
        cheb = np.abs(self._mi(np.asarray(point, dtype=float) - c)).max(axis=1)
        lim = np.where(kind == NONE, own_min + 0.5 * (cheb - h - own_min), cheb - h)
        k = int(np.argmin(lim))
        return float(lim[k]), int(ids[k])

    def _release(self, b, t):
        """Sample and destroy b's protection if it was built before t; queue a rebuild."""
        if b < 0:
            return False
        if self.kind[b] == PAIR and self.pair_of[b].t0 < t:
            pp = self.pair_of[b]
            self._propagate_pair(pp, t)
            for m in pp.members:
                self._queue_rebuild(m, t)
            return True
        if self.kind[b] == SINGLE and self.sim.store.tim[b] < t:
            self._propagate_single(b, t)
            self._queue_rebuild(b, t)
            return True
        if self.kind[b] == CLUSTER and self.cluster_of[b].t0 < t:
            cp = self.cluster_of[b]
            self._propagate_cluster(cp, t)
            for m in cp.members:
                self._queue_rebuild(m, t)
            return True
        return False

    def build_protection(self, i, t):
        """Protect the unprotected particle i (single or pair) and queue it."""
        st = self.sim.store
        R_i, D_i = self._radius(i), self._diff(i)
        cap = min(self.params.mu_p_max * R_i, self.hcap)
        self.stats["rebuilds"] += 1
        for _ in range(8):
            lim, b = self._limits(st.pos[i], R_i, (i,), (i,))
            h = min(cap, lim)
            a = h - R_i
            if b < 0 or D_i == 0 and self._diff(b) == 0:
                break
            thresh = self.params.theta_pair * self._contact(i, b)
            if a >= thresh or not self._interacts(i, b):
                break
            # a protected blocker is sampled now and shares the gap fairly
            if self._release(b, t):
                continue
            if self.kind[b] == SINGLE:
                # built at this very instant: its position is still the cube centre
                self._propagate_single(b, t, interrupted=False)
                self.sim.queue.discard(b)
            if self.kind[b] != NONE:
                break
            key = (min(i, b), max(i, b))
            if self._failed.get(key) == (st.tim[i], st.tim[b]):
                break
            self.sim.queue.discard(b)
            if self.make_pair(i, b, t) or self.make_cluster(i, b, t):
                return
            if len(self._failed) > 4096:
                self._failed.clear()
            self._failed[key] = (t, t)
            self._queue_rebuild(b, t)
        else:
            lim, b = self._limits(st.pos[i], R_i, (i,), (i,))
            a = min(cap, lim) - R_i
        if a <= 0:
            # overlapping cores, or a Chebyshev-close blocker that could not be paired;
            # keep moving with a tiny cube
            self.stats["degenerate"] += 1
            a = 1e-6 * R_i
        self._protect_single(i, t, a)

    def _protect_single(self, i, t, a):
        st, q = self.sim.store, self.sim.queue
        D = self._diff(i)
        self.kind[i] = SINGLE
        self.center[i] = st.pos[i]
        self.half[i] = a
        st.tim[i] = t
        if a <= 0 or D == 0:
            te, ax, side = (np.inf if D == 0 else t), 0, 0
        else:
            dt, ax, side = self.sampler.first_passage(a, D, self.sim.dim)
            te = t + dt
        self.t_exit[i], self.exit_axis[i], self.exit_side[i] = te, ax, side
        lam = self.sim.species.decay_rate[st.species[i]]
        td = t + self.rng.exponential(1.0 / lam) if lam > 0 else np.inf
        q.discard(i)
        if td < te:
            q.schedule(int(i), td, int(i), SINGLE_DECAY)
        else:
            q.schedule(int(i), te, P_BOUNDARY, 0)

    def make_pair(self, i, j, t):
        """Try to protect i and j together; both must be unprotected at time t."""
        st, p = self.sim.store, self.params
        Di, Dj = self._diff(i), self._diff(j)
        if Di + Dj == 0:
            return False
        Ri, Rj = self._radius(i), self._radius(j)
        dij = self._contact(i, j)
        r0 = self._mi(st.pos[i] - st.pos[j])
        d0 = float(np.linalg.norm(r0))
        ai, aj = Di / (Di + Dj), Dj / (Di + Dj)
        R0 = st.pos[i] - ai * r0
        h_core = max(ai * d0 + Ri, aj * d0 + Rj)
        for _ in range(8):
            lim, blk = self._limits(R0, h_core, (i, j), (i, j))
            H = min(self.hcap, lim)
            b_max = min((H - Ri) / ai if ai > 0 else np.inf, (H - Rj) / aj if aj > 0 else np.inf)
            if b_max > d0 * (1 + 1e-3):
                break
            # an older protection in the way is sampled now and rebuilt after the pair
            if not self._release(blk, t):
                return False
        else:
            return False
        b = min(p.mu_p * dij, d0 + 0.5 * (b_max - d0))
        if b <= d0:
            b = d0 + 0.5 * (b_max - d0)
        a_cm = H - max(ai * b + Ri, aj * b + Rj)
        if a_cm <= 0:
            return False
        D_rel, D_cm = Di + Dj, Di * Dj / (Di + Dj)
        dim = self.sim.dim
        sigma = p.h_hop * dij / np.sqrt(dim)
        rule = self.sim.species.rule(st.species[i], st.species[j])
        stream = WalkStream(dim, seed=self.sim.clock.spawn_seed())
        pp = PairProtection(i=int(i), j=int(j), t0=t, R0=R0.copy(), r0=r0.copy(), a_cm=a_cm, b=b,
                            d_contact=dij, D_cm=D_cm, D_rel=D_rel, alpha_i=ai, alpha_j=aj,
                            half_width=H, sigma=sigma, tau=sigma**2 / (2 * D_rel),
                            reflect=rule.kind == "elastic", rng_state=stream.saved)
        status, hops, r_end = walk(r0, sigma, dij, b, pp.reflect, pp.rng_state, p.max_hops)
        if status == WALK_RUNNING:
            raise FPKMCError(f"pair {i},{j}: walker not absorbed after {hops} hops")
        self.stats["hops"] += hops
        pp.walk_status, pp.walk_hops, pp.walk_end = status, hops, r_end
        pp.t_walk = t + hops * pp.tau
        if D_cm > 0:
            dt, pp.cm_axis, pp.cm_side = self.sampler.first_passage(a_cm, D_cm, dim)
            pp.t_cm = t + dt
        lam = self.sim.species.decay_rate
        li, lj = lam[st.species[i]], lam[st.species[j]]
        pp.t_decay_i = t + self.rng.exponential(1.0 / li) if li > 0 else np.inf
        pp.t_decay_j = t + self.rng.exponential(1.0 / lj) if lj > 0 else np.inf
        options = [(pp.t_walk, PAIR_COLLIDE if status == WALK_INNER else PAIR_DISSOLVE),
                   (pp.t_cm, PAIR_CM_EXIT), (pp.t_decay_i, PAIR_DECAY), (pp.t_decay_j, PAIR_DECAY)]
        k = int(np.argmin([o[0] for o in options]))
        pp.t_event, pp.outcome = options[k]
        if pp.outcome == PAIR_DECAY:
            pp.extra["decaying"] = int(i) if k == 2 else int(j)
        for m in (i, j):
            self.kind[m] = PAIR
            self.pair_of[m] = pp
            st.tim[m] = t
        q = self.sim.queue
        q.discard(i)
        q.discard(j)
        q.schedule(int(i), pp.t_event, int(j), pp.outcome)
        q.schedule(int(j), pp.t_event, int(i), pp.outcome)
        self.stats["pairs"] += 1
        return True

    # ------------------------------------------------------------ clusters
    def make_cluster(self, i, j, t):
        """Protect unprotected i, j and their close unprotected neighbours as one hopping group."""
        st, p = self.sim.store, self.params
        members = [int(i), int(j)]
        half = {}
        grew = True
        while grew:
            grew = False
            for k in list(members):
                Rk = self._radius(k)
                lim, b = self._limits(st.pos[k], Rk, tuple(members), (k,))
                a = min(lim, p.mu_p_max * Rk, self.hcap) - Rk
                half[k] = a
                if b < 0 or len(members) >= p.max_cluster:
                    continue
                if a >= p.theta_pair * self._contact(k, b):
                    continue
                if self._release(b, t):
                    grew = True
                    break
                if self.kind[b] == SINGLE:
                    self._propagate_single(b, t, interrupted=False)
                if self.kind[b] == NONE:
                    self.sim.queue.discard(b)
                    members.append(int(b))
                    grew = True
                    break
        ids = np.array(members, dtype=np.int64)
        if not (self.sim.species.diffusion[st.species[ids]] > 0).any():
            return False
        a = np.maximum(np.array([half[k] for k in members]), 0.0)
        lam = self.sim.species.decay_rate[st.species[ids]]
        t_dec = np.array([t + self.rng.exponential(1.0 / l) if l > 0 else np.inf for l in lam])
        cp = ClusterProtection(members=tuple(members), t0=t, start=st.pos[ids].copy(), half=a,
                               seed=self.sim.clock.spawn_seed(), until=float(t_dec.min()))
        if np.isfinite(cp.until):
            cp.extra["decaying"] = members[int(np.argmin(t_dec))]
        t_end, pos, outcome, extra, hops = self._cluster_run(cp, cp.until)
        cp.t_end, cp.end_pos, cp.outcome, cp.hops = t_end, pos, outcome, hops
        cp.extra.update(extra)
        self.stats["clusters"] += 1
        self.stats["cluster_hops"] += hops
        q = self.sim.queue
        for n, m in enumerate(members):
            self.kind[m] = CLUSTER
            self.cluster_of[m] = cp
            self.center[m] = st.pos[m]
            self.half[m] = a[n]
            self.t_exit[m] = np.inf
            st.tim[m] = t
            q.discard(m)
            q.schedule(m, t_end, members[(n + 1) % len(members)], CLUSTER_END)
        return True

    def _cluster_run(self, cp, until):
        """Hop the cluster from its start until ``until`` or the first stopping hop.

        A hop that leaves a member's cube is clipped to the cube and ends the
        run (``exit``); a hop onto a reacting partner ends it (``react``); a
        hop onto an inert hard core is rejected for that particle.
        """
        st, sp = self.sim.store, self.sim.species
        ids = np.array(cp.members, dtype=np.int64)
        s = st.species[ids]
        local, inv = np.unique(s, return_inverse=True)
        pos = cp.start.copy()
        prev = pos.copy()
        lo, hi = cp.start - cp.half[:, None], cp.start + cp.half[:, None]
        contact = sp.pair_diameter[np.ix_(s, s)]
        inter = sp.interaction[np.ix_(s, s)].astype(bool)
        np.fill_diagonal(inter, False)
        result = {}

        def on_hop(_, moved):
            for k in moved:
                out = (pos[k] < lo[k]).any() or (pos[k] > hi[k]).any()
                if out:
                    pos[k] = np.clip(pos[k], lo[k], hi[k])
                d = np.linalg.norm(self._mi(pos[k] - pos), axis=1)
                hit = np.nonzero(inter[k] & (d < contact[k]))[0]
                elastic = [l for l in hit if sp.rule(s[k], s[l]).kind == "elastic"]
                react = [l for l in hit if sp.rule(s[k], s[l]).kind != "elastic"]
                if react:
                    result["outcome"] = "react"
                    result["pair"] = (int(ids[k]), int(ids[react[0]]))
                    return False
                if elastic:
                    pos[k] = prev[k]
                    continue
                prev[k] = pos[k]
                if out:
                    result["outcome"] = "exit"
                    return False
            return True

        rng = np.random.default_rng(cp.seed)
        hop = self.params.h_cluster * sp.diameter[local]
        t_end, counts = td_cluster_hop(rng, pos, inv, sp.diffusion[local], hop, cp.t0, until,
                                       on_hop=on_hop, max_hops=self.params.max_hops)
        if not result and t_end < until:
            raise FPKMCError(f"cluster {cp.members}: no exit after {self.params.max_hops} hops")
        outcome = result.pop("outcome", "decay" if np.isfinite(until) and until == cp.until
                             and "decaying" in cp.extra else "horizon")
        return t_end, pos, outcome, result, int(counts.sum())

    def _set_cluster_positions(self, cp, pos, t):
        st = self.sim.store
        for n, m in enumerate(cp.members):
            st.pos[m] = pos[n]
            st.tim[m] = t
            self.kind[m] = NONE
            self.cluster_of.pop(m, None)
        self._relocate(cp.members)

    def _propagate_cluster(self, cp, t):
        """Replay the hops up to t and dissolve the cluster there."""
        if t >= cp.t_end:
            pos = cp.end_pos
        else:
            _, pos, _, _, _ = self._cluster_run(cp, t)
        self._set_cluster_positions(cp, pos, t)
        for m in cp.members:
            self.sim.queue.discard(m)

    def process_cluster_end(self, i, t):
        cp = self.cluster_of.get(i)
        if cp is None:
            raise FPKMCError(f"cluster event for {i} without a protection")
        q = self.sim.queue
        for m in cp.members:
            q.discard(m)
        self._set_cluster_positions(cp, cp.end_pos, t)
        rest = list(cp.members)
        if cp.outcome == "react":
            a, b = cp.extra["pair"]
            rest = [m for m in rest if m not in (a, b)]
            for m in rest:
                self._queue_rebuild(m, t)
            self.stats["collisions"] += 1
            self.process_reaction(a, b, t)
            return
        if cp.outcome == "decay":
            dec = cp.extra["decaying"]
            for m in rest:
                if m != dec:
                    self._queue_rebuild(m, t)
            self.decay(dec, t)
            return
        for m in rest:
            if not self._drop_if_outside(m):
                self._queue_rebuild(m, t)

    # ------------------------------------------------------------ event loop
    def start(self):
        sim = self.sim
        for i in sim.store.alive():
            sim.store.vel[i] = 0.0
            if i not in sim.queue:
                sim.queue.schedule(int(i), sim.clock.t, 0, -1)
        rate = float(self.sim.species.birth_rate.sum())
        if rate > 0:
            sim.external.push(sim.clock.t + self.rng.exponential(1.0 / rate), EXT_BIRTH)

    def counters(self):
        return dict(self.stats)

    def run_particles(self, t_stop, max_events, coll_target=np.iinfo(np.int64).max):
        sim, q = self.sim, self.sim.queue
        every = sim.check_every or self.params.check_every
        done = 0
        while done < max_events and len(q):
            if q.peek_time() > t_stop:
                break
            i, rec = q.pop()
            sim.clock.advance(rec.time)
            sim.log.append(rec.time, i, rec.partner, rec.qualifier)
            self.process(i, rec.time, rec.partner, rec.qualifier)
            done += 1
            self.stats["events"] += 1
            if every and self.stats["events"] % every == 0:
                self.check_disjoint()
            if self.stats["collisions"] >= coll_target:
                break
        return done, 0

    def process(self, i, t, p, nu):
        st = self.sim.store
        if p == P_BOUNDARY or (p == 0 and nu == 0):
            if self.kind[i] == SINGLE:
                if t >= self.t_exit[i]:
                    disp = self.sampler.exit_point(self.half[i], self._diff(i), t - st.tim[i],
                                                   self.sim.dim, self.exit_axis[i], self.exit_side[i])
                    st.pos[i] = self.center[i] + disp
                    st.tim[i] = t
                    self.kind[i] = NONE
                    self.stats["single_exits"] += 1
                    self._relocate([i])
                else:
                    self._propagate_single(i, t)
            if self._drop_if_outside(i):
                return
            self.build_protection(i, t)
        elif p == 0 and nu == -1:
            self.update(i, t)
        elif p == i:
            self._propagate_single(i, t, interrupted=False)
            self.decay(i, t)
        elif nu == CLUSTER_END and 1 <= p < P_BOUNDARY:
            self.process_cluster_end(i, t)
        elif 1 <= p < P_BOUNDARY:
            self.process_pair(i, int(p), int(nu), t)
        else:
            raise FPKMCError(f"unexpected event ({t}, {p}, {nu}) for particle {i}")

    def _drop_if_outside(self, i):
        g = self.sim.grid
        m = g.mask[self.sim.store.cell[i]]
        if m & BIT_E:
            self._remove(i)
            return True
        return False

    def update(self, i, t):
        """Step-5 handling for an inserted particle: clear overlapping protections, react, protect."""
        st = self.sim.store
        Ri = self._radius(i)
        touched = []
        for j in self._nearby(st.pos[i], (i,)):
            if not self._interacts(i, j) or not st.mode[j] != ABSENT:
                continue
            c, h = self.region(j)
            if float(np.max(np.abs(self._mi(st.pos[i] - c)))) < h + Ri and self.kind[j] != NONE:
                grp = self.group(j)
                self.propagate(j, t)
                touched.extend(grp)
        for j in list(dict.fromkeys(touched)):
            if st.mode[j] != ABSENT:
                self._queue_rebuild(j, t)
        for j in self._nearby(st.pos[i], (i,)):
            if not self._interacts(i, j):
                continue
            if np.linalg.norm(self._mi(st.pos[i] - st.pos[j])) < self._contact(i, j) * (1 - 1e-12):
                if self.kind[j] == NONE:
                    self.stats["overlaps"] += 1
                    rule = self.sim.species.rule(st.species[i], st.species[j])
                    if rule.kind != "elastic":
                        self.process_reaction(i, j, t)
                        return
        self.build_protection(i, t)

    def process_pair(self, i, j, nu, t):
        pp = self.pair_of.get(i)
        if pp is None or j not in pp.members:
            raise FPKMCError(f"pair event for {i},{j} without a protection")
        q = self.sim.queue
        q.discard(j)
        if nu == PAIR_COLLIDE:
            R, r = self._pair_state_at(pp, t, use_walk_end=True)
            self._set_pair_positions(pp, R, r, t)
            self.stats["collisions"] += 1
            self.process_reaction(pp.i, pp.j, t)
            return
        if nu == PAIR_DISSOLVE:
            R, r = self._pair_state_at(pp, t, use_walk_end=True)
            self.stats["pair_dissolved"] += 1
        elif nu == PAIR_CM_EXIT:
            R, r = self._pair_state_at(pp, t, cm_exit=True)
            self.stats["pair_cm_exits"] += 1
        else:
            R, r = self._pair_state_at(pp, t)
        self._set_pair_positions(pp, R, r, t)
        other = pp.j if i == pp.i else pp.i
        if nu == PAIR_DECAY:
            dec = pp.extra["decaying"]
            keep = pp.i if dec == pp.j else pp.j
            self._queue_rebuild(keep, t)
            self.decay(dec, t)
            return
        self._queue_rebuild(other, t)
        if not self._drop_if_outside(i):
            self.build_protection(i, t)
        if self.sim.store.mode[other] != ABSENT:
            self._drop_if_outside(other)

    # ------------------------------------------------------------ reactions
    def _remove(self, i):
        if self.kind[i] == PAIR:
            self.pair_of.pop(i, None)
        self.cluster_of.pop(i, None)
        self.kind[i] = NONE
        self.sim.remove_particle(int(i))
        self.stats["deaths"] += 1

    def _set_species(self, i, s):
        st, g = self.sim.store, self.sim.grid
        g.remove(i, st.species[i], st.cell)
        st.species[i] = s
        w, _ = g.wrap(st.pos[i], st.img[i])
        g.insert(i, g.locate_cell(w), s, st.cell)

    def _insert(self, r, s, t):
        i = self.sim.add_particle(self._wrap_inside(r), int(s), np.zeros(self.sim.dim))
        self.pack()
        self.kind[i] = NONE
        self.sim.store.tim[i] = t
        self.stats["births"] += 1
        return i

    def _wrap_inside(self, r):
        return np.asarray(r, dtype=float)

    def process_reaction(self, i, j, t):
        """Apply the contact rule of i and j (both unprotected at time t)."""
        st, sp, q = self.sim.store, self.sim.species, self.sim.queue
        rule = sp.rule(st.species[i], st.species[j])
        if rule.kind == "elastic":
            for m in (i, j):
                self._queue_rebuild(m, t)
            return []
        self.stats["reactions"] += 1
        ri = st.pos[i].copy()
        rij = self._mi(st.pos[i] - st.pos[j])
        rj = ri - rij
        if rule.kind == "annihilate":
            self._remove(i)
            self._remove(j)
            return []
        if rule.kind == "coalesce":
            Di, Dj = self._diff(i), self._diff(j)
            w = 0.5 if Di + Dj == 0 else Dj / (Di + Dj)
            keep = min(i, j)
            self._remove(max(i, j))
            st.pos[keep] = w * ri + (1 - w) * rj
            st.tim[keep] = t
            q.discard(keep)
            if rule.products:
                self._set_species(keep, rule.products[0])
            self._relocate([keep])
            q.schedule(int(keep), t, 0, -1)
            return [keep]
        # general products at the contact point, spread along the line of centres
        Ri, Rj = self._radius(i), self._radius(j)
        dist = float(np.linalg.norm(rij)) or 1.0
        u = rij / dist
        contact = rj + u * (Rj * dist / max(Ri + Rj, 1e-300))
        self._remove(i)
        self._remove(j)
        return self._place_products(rule.products, contact, u, t)

    def _place_products(self, products, origin, u, t):
        sp = self.sim.species
        n = len(products)
        if not n:
            return []
        step = float(max(sp.diameter[list(products)])) * (1 + 1e-9)
        out = []
        for k, s in enumerate(products):
            r = origin + (k - (n - 1) / 2) * step * u
            i = self._insert(r, s, t)
            self.stats["births"] -= 1
            out.append(i)
        return out

    def decay(self, i, t):
        """Decay of particle i (already unprotected at time t)."""
        st, sp, q = self.sim.store, self.sim.species, self.sim.queue
        self.stats["decays"] += 1
        prods = sp.species[st.species[i]].decay_products
        if not prods:
            self._remove(i)
            return []
        self._set_species(i, prods[0])
        q.discard(i)
        q.schedule(int(i), t, 0, -1)
        out = [i]
        if len(prods) > 1:
            u = self.rng.normal(size=self.sim.dim)
            u /= np.linalg.norm(u)
            out += self._place_products(prods[1:], st.pos[i] + u * sp.diameter[st.species[i]] * 1.000001,
                                        u, t)
        return out

    # ------------------------------------------------------------ births
    def process_external(self, kind, key, t):
        if kind != EXT_BIRTH:
            raise FPKMCError(f"unexpected external event kind {kind}")
        self.process_birth_event(t)
        rate = float(self.sim.species.birth_rate.sum())
        self.sim.external.push(t + self.rng.exponential(1.0 / rate), EXT_BIRTH)

    def process_birth_event(self, t):
        """Insert one particle at a uniform point of the simulated box; returns its id."""
        sim, sp = self.sim, self.sim.species
        rates = sp.birth_rate
        s = int(self.rng.choice(len(rates), p=rates / rates.sum()))
        R = sp.radius[s]
        for _ in range(self.params.max_birth_tries):
            r = self.rng.random(sim.dim) * sim.grid.box
            # true positions of anything whose protection covers the newborn
            blocked = False
            for j in self._nearby(r):
                if not sp.interaction[s, sim.store.species[j]]:
                    continue
                c, h = self.region(j)
                if float(np.max(np.abs(self._mi(r - c)))) < h + R and self.kind[j] != NONE:
                    grp = self.group(j)
                    self.propagate(j, t)
                    for m in grp:
                        self._queue_rebuild(m, t)
                dist = np.linalg.norm(self._mi(r - sim.store.pos[j]))
                if dist < sp.pair_diameter[s, sim.store.species[j]] and \
                        sp.rule(s, sim.store.species[j]).kind == "elastic":
                    blocked = True
            if not blocked:
                return self._insert(r, s, t)
        log.info("birth deferred: no free spot after %d tries", self.params.max_birth_tries)
        return -1

    # ------------------------------------------------------------ checks
    def check_disjoint(self):
        """O(N^2) scan; returns the number of intersecting protection pairs."""
        st = self.sim.store
        ids = st.alive()
        bad = 0
        self.stats["disjoint_checks"] += 1
        for x in range(len(ids)):
            i = ids[x]
            ci, hi = self.region(i)
            for y in range(x + 1, len(ids)):
                j = ids[y]
                if not self._interacts(i, j):
                    continue
                if self.kind[i] == PAIR and self.kind[j] == PAIR and self.pair_of[i] is self.pair_of[j]:
                    continue
                if self.kind[i] == CLUSTER and self.kind[j] == CLUSTER and \
                        self.cluster_of[i] is self.cluster_of[j]:
                    continue
                cj, hj = self.region(j)
                d = np.abs(self._mi(ci - cj))
                if self.kind[i] == NONE and self.kind[j] == NONE:
                    ok = np.linalg.norm(d) >= self._contact(i, j) * (1 - 1e-9)
                elif self.kind[i] == NONE or self.kind[j] == NONE:
                    hc = hj if self.kind[i] == NONE else hi
                    R = hi if self.kind[i] == NONE else hj
                    ok = np.linalg.norm(np.maximum(d - hc, 0.0)) >= R * (1 - 1e-9)
                else:
                    ok = d.max() >= (hi + hj) * (1 - 1e-9)
                if not ok:
                    bad += 1
        if bad:
            self.stats["disjoint_violations"] += bad
            self.sim.violations["disjointness"] += bad
            log.error("%d intersecting protections at t=%g", bad, self.sim.clock.t)
        return bad

    def check_invariant_hook(self):
        return self.check_disjoint()

    def synchronize(self, t):
        """Sample every particle at t, destroy all protections and requeue rebuilds."""
        st = self.sim.store
        done = set()
        for i in st.alive():
            i = int(i)
            if i in done:
                continue
            grp = self.group(i)
            if self.kind[i] != NONE:
                self.propagate(i, t)
            st.tim[i] = t
            for m in grp:
                done.add(m)
                self._queue_rebuild(m, t)

    def predict_next_event(self, i):
        return self.sim.queue.record(i)

    def overlaps(self, i, t=None):
        st = self.sim.store
        n = 0
        for j in self._nearby(st.pos[i], (i,)):
            if self._interacts(i, j) and self.kind[j] == NONE and self.kind[i] == NONE:
                if np.linalg.norm(self._mi(st.pos[i] - st.pos[j])) < self._contact(i, j) * (1 - 1e-12):
                    n += 1
        return n

    def state_dict(self):
        pairs = {}
        for pp in self.pair_of.values():
            pairs[(pp.i, pp.j)] = pp
        return {"kind": self.kind.copy(), "center": self.center.copy(), "half": self.half.copy(),
                "t_exit": self.t_exit.copy(), "exit_axis": self.exit_axis.copy(),
                "exit_side": self.exit_side.copy(), "pairs": pairs, "stats": dict(self.stats),
                "clusters": {cp.members: cp for cp in self.cluster_of.values()},
                "failed": dict(self._failed),
                "capacity": self.capacity}

    def load_state(self, d):
        for k in ("kind", "center", "half", "t_exit", "exit_axis", "exit_side"):
            setattr(self, k, d[k].copy())
        self.capacity = d["capacity"]
        self.stats = dict(d["stats"])
        self._failed = dict(d["failed"])
        self.pair_of = {}
        for pp in d["pairs"].values():
            self.pair_of[pp.i] = pp
            self.pair_of[pp.j] = pp
        self.cluster_of = {}
        for cp in d.get("clusters", {}).values():
            for m in cp.members:
                self.cluster_of[m] = cp
