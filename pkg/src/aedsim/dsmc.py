"""Stochastic (DSMC) collisions and the event-driven / time-driven hybrid.

DSMC particles of species ``delta`` never collide deterministically with each
other. Near any other particle (within one cell shell) they are event driven
and collide exactly with the solute. Elsewhere they are time driven: they are
moved in bulk at every time-step event, when the per-cell stochastic
collisions are also processed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .edmd import (ED, I_DSMC, I_HYBRID, TD, EDMDBackend, advance, predict_schedule,
                   sample_thermal_velocity)
from .events import (EXT_DSMC, EXT_TIME_STEP, P_BOUNDARY, P_INVALID, heap_push, heap_remove,
                     heap_update)
from .spatial import BIT_B, BIT_E, BIT_ED, OPEN, PERIODIC, THERMAL, WALL

log = logging.getLogger("aedsim.dsmc")


@dataclass
class DsmcParams:
    species: int = 0
    dt: float = 0.1
    kT: float = 1.0
    v_rel_max: float | None = None
    prefactor: float | None = None
    cross_section_diameter: float | None = None
    collision_mode: str = "event"
    reservoir_density: float = 0.0
    reservoir_kT: float = 1.0
    reservoir_drift: tuple | None = None
    body_acceleration: tuple | None = None
    refresh_every: int = 100

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("DSMC time step must be positive")
        if self.collision_mode not in ("step", "event"):
            raise ValueError("collision_mode must be 'step' or 'event'")
        if self.reservoir_density < 0:
            raise ValueError("reservoir density must be >= 0")
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be >= 1")


# ------------------------------------------------------------ basic operations

def next_stochastic_collision_time(rng, t, rate):
    """t plus an exponential waiting time; inf when the rate is not positive."""
    if rate <= 0:
        return np.inf
    return t - np.log(1.0 - rng.random()) / rate


def cell_acceptance(n_l, n_max):
    """Probability that a uniformly drawn cell with n_l members is kept."""
    n_l = np.asarray(n_l, dtype=float)
    if n_max < 2:
        return np.zeros_like(n_l)
    return np.where(n_l >= 2, n_l * (n_l - 1) / (n_max * (n_max - 1.0)), 0.0)


def select_cell_rejection(rng, counts, n_max):
    """One cell-rejection trial: the chosen cell index, or -1 if rejected."""
    c = int(rng.integers(len(counts)))
    return c if rng.random() < cell_acceptance(counts[c], n_max) else -1


def select_cells_rejection(rng, counts, n_max, n_trials):
    """Vectorised cell-rejection trials; returns the accepted cell indices."""
    counts = np.asarray(counts)
    cells = rng.integers(len(counts), size=n_trials)
    keep = rng.random(n_trials) < cell_acceptance(counts[cells], n_max)
    return cells[keep]


def select_pair_rejection(rng, members, vel, v_rel_max):
    """Uniform distinct pair from members, kept with probability |v_ij|/v_rel_max.

    Returns (i, j, accepted, violated); a violated bound always accepts.
    """
    n = len(members)
    if n < 2:
        raise ValueError("need at least two particles")
    a = int(rng.integers(n))
    b = int(rng.integers(n - 1))
    if b >= a:
        b += 1
    i, j = int(members[a]), int(members[b])
    vr = float(np.linalg.norm(vel[i] - vel[j]))
    if vr > v_rel_max:
        return i, j, True, True
    return i, j, bool(rng.random() * v_rel_max < vr), False


def random_direction(rng, dim):
    if dim == 2:
        phi = 2 * np.pi * rng.random()
        return np.array([np.cos(phi), np.sin(phi)])
    cz = 2.0 * rng.random() - 1.0
    phi = 2 * np.pi * rng.random()
    sz = np.sqrt(1.0 - cz * cz)
    return np.array([sz * np.cos(phi), sz * np.sin(phi), cz])


def scatter(vi, vj, mi, mj, direction):
    """Hard-sphere scattering: keep the centre-of-mass velocity and |v_rel|."""
    m = mi + mj
    vcm = (mi * vi + mj * vj) / m
    g = np.linalg.norm(vi - vj) * np.asarray(direction)
    return vcm + (mj / m) * g, vcm - (mi / m) * g


def process_stochastic_collision(rng, vel, mass, i, j):
    """In-place hard-sphere DSMC collision of i and j (masses by particle)."""
    if i == j:
        raise ValueError("a particle cannot collide with itself")
    vel[i], vel[j] = scatter(vel[i], vel[j], mass[i], mass[j], random_direction(rng, vel.shape[1]))


def collision_prefactor(dim, diameter, v_rel_max, cell_volume):
    """Candidate pairs per unit time per N_L(N_L - 1), hard-sphere kinetic theory."""
    if dim == 3:
        return np.pi * diameter**2 * v_rel_max / (2.0 * cell_volume)
    return diameter * v_rel_max / (2.0 * cell_volume)


# ------------------------------------------------------------ compiled kernels

@njit(cache=True)
def _sync_ed(x, t, pos, vel, tim, ev_t, ev_p, ev_nu, heap, slot, hsize, synced, n_synced):
    """Pull an event-driven particle out of the queue and bring it to time t."""
    if synced[x]:
        return n_synced
    if slot[x] >= 0:
        heap_remove(ev_t, heap, slot, hsize, x)
    k = ev_p[x]
    if 1 <= k < P_BOUNDARY and k != x and slot[k] >= 0 and ev_p[k] == x:
        ev_p[k] = 0
        ev_nu[k] = 0
        heap_update(ev_t, heap, slot, hsize, k, t)
    advance(pos, vel, tim, x, t)
    synced[x] = True
    return n_synced + 1


@njit(cache=True)
def step_collisions(t, lam, delta, only_td, vrmax, rand, P, Q, G, mass_delta,
                    members, synced, stats):
    """Per-cell stochastic collisions for one time step.

    ``lam`` is the expected number of candidates per N_L(N_L-1) in this step.
    Random numbers are consumed sequentially from ``rand``. Returns the
    number of draws used.
    """
    pos, vel, tim, species, mode, img, cell = P
    ev_t, ev_p, ev_nu, heap, slot, hsize = Q
    head, nxt, prv, count, mask, nbr, nbr_shift, ccoord, origin, csize, dims, box, kinds = G
    d = pos.shape[1]
    u = 0
    n_synced = 0
    ed_bit = np.uint64(1) << np.uint64(61)
    for c in range(count.shape[0]):
        n = count[c, delta]
        if n < 2:
            continue
        if only_td and (mask[c] & ed_bit) != 0:
            continue
        m = 0
        x = head[c]
        while x >= 0:
            if species[x] == delta:
                members[m] = x
                m += 1
            x = nxt[x]
        e = lam * n * (n - 1)
        nc = int(e)
        if rand[u] < e - nc:
            nc += 1
        u += 1
        for _ in range(nc):
            a = int(rand[u] * m)
            b = int(rand[u + 1] * (m - 1))
            u += 2
            if b >= a:
                b += 1
            i = members[a]
            j = members[b]
            vr2 = 0.0
            for ax in range(d):
                g = vel[i, ax] - vel[j, ax]
                vr2 += g * g
            vr = np.sqrt(vr2)
            stats[0] += 1
            if vr > vrmax[0]:
                stats[2] += 1
                vrmax[0] = vr
            elif rand[u] * vrmax[0] >= vr:
                u += 1
                u += 2
                continue
            u += 1
            if mode[i] == ED:
                n_synced = _sync_ed(i, t, pos, vel, tim, ev_t, ev_p, ev_nu, heap, slot, hsize,
                                    synced, n_synced)
            if mode[j] == ED:
                n_synced = _sync_ed(j, t, pos, vel, tim, ev_t, ev_p, ev_nu, heap, slot, hsize,
                                    synced, n_synced)
            if d == 3:
                cz = 2.0 * rand[u] - 1.0
                phi = 2.0 * np.pi * rand[u + 1]
                sz = np.sqrt(1.0 - cz * cz)
                nx, ny, nz = sz * np.cos(phi), sz * np.sin(phi), cz
            else:
                phi = 2.0 * np.pi * rand[u]
                nx, ny, nz = np.cos(phi), np.sin(phi), 0.0
            u += 2
            for ax in range(d):
                vcm = 0.5 * (vel[i, ax] + vel[j, ax])
                dirn = nx if ax == 0 else (ny if ax == 1 else nz)
                vel[i, ax] = vcm + 0.5 * vr * dirn
                vel[j, ax] = vcm - 0.5 * vr * dirn
            stats[1] += 1
    return u


@njit(cache=True)
def requeue_synced(t, synced, ev_t, ev_p, ev_nu, heap, slot, hsize, cap):
    for x in range(1, cap + 1):
        if synced[x]:
            synced[x] = False
            ev_t[x] = t
            ev_p[x] = 0
            ev_nu[x] = 1
            heap_push(ev_t, heap, slot, hsize, x)


# ------------------------------------------------------------ hybrid backend

class SEDMDBackend(EDMDBackend):
    """Hybrid of exact solute dynamics with a DSMC solvent."""

    name = "sedmd"

    def __init__(self, sim, params: DsmcParams | None = None, wall_temperature=1.0,
                 full_check_every=0):
        self.params = params or DsmcParams()
        super().__init__(sim, wall_temperature=wall_temperature, full_check_every=full_check_every)
        p = self.params
        sp = sim.species
        self.delta = int(p.species)
        if sp.interaction[self.delta, self.delta]:
            raise ValueError("the DSMC species must not interact with itself")
        if sp.nnl[self.delta] and sim.use_nnl:
            raise ValueError("the DSMC species cannot use neighbour lists")
        self.iparams[I_DSMC] = self.delta
        self.iparams[I_HYBRID] = 1
        m = sp.mass[self.delta]
        if not np.all(sp.mass[self.delta] == m):
            raise ValueError("bad DSMC mass")
        self.v_rmax = np.array([p.v_rel_max or 5.0 * np.sqrt(p.kT / m)])
        self.sigma_d = p.cross_section_diameter or sp.diameter[self.delta]
        self.n_max = 2
        self.steps = 0
        self.dsmc = {"candidates": 0, "collisions": 0, "vrel_violations": 0,
                     "nmax_violations": 0, "event_trials": 0, "reservoir_trials": 0,
                     "reservoir_accepted": 0, "removed": 0, "to_ed": 0, "to_td": 0,
                     "count_failures": 0, "classify_failures": 0}
        self._dstats = np.zeros(4, dtype=np.int64)
        self._synced = np.zeros(sim.store.capacity + 1, dtype=bool)
        self.next_dsmc_seq = None

    def pack(self):
        super().pack()
        cap = self.sim.store.capacity
        if getattr(self, "_synced", None) is None or self._synced.shape[0] != cap + 1:
            self._synced = np.zeros(cap + 1, dtype=bool)

    # -- helpers
    def lam0(self):
        if self.params.prefactor is not None:
            return float(self.params.prefactor)
        return collision_prefactor(self.sim.dim, self.sigma_d, self.v_rmax[0], self.sim.grid.cell_volume())

    def positions_at(self, ids, t):
        st = self.sim.store
        return st.pos[ids] + st.vel[ids] * (t - st.tim[ids])[:, None]

    def cell_positions(self, ids):
        sim = self.sim
        st = sim.store
        ids = np.asarray(ids)
        dt = np.where(st.mode[ids] == ED, sim.clock.t - st.tim[ids], 0.0)
        p = st.pos[ids] + st.vel[ids] * dt[:, None]
        per = sim.grid.periodic
        p[:, per] -= st.img[ids][:, per] * sim.grid.box[per]
        return p

    def classify(self):
        """Event-driven cells: one cell shell around every non-DSMC particle."""
        g = self.sim.grid
        solute = np.delete(g.count, self.delta, axis=1).sum(axis=1) > 0
        ed = np.zeros(g.n_cells, dtype=bool)
        nb = g.nbr[solute].ravel()
        ed[nb[nb >= 0]] = True
        return ed

    def _to_td(self, i):
        q = self.sim.queue
        k = q.ev_p[i]
        if i in q:
            q.cancel(i)
        if 1 <= k < P_BOUNDARY and k != i and k in q and q.ev_p[k] == i:
            q.invalidate_third_party(int(k), self.sim.clock.t)
        q.ev_p[i] = P_INVALID
        st = self.sim.store
        advance(st.pos, st.vel, st.tim, i, self.sim.clock.t)
        st.mode[i] = TD
        self.dsmc["to_td"] += 1

    def _to_ed(self, i, t):
        st = self.sim.store
        st.mode[i] = ED
        self.sim.queue.schedule(int(i), t, 0, -1)
        self.dsmc["to_ed"] += 1

    def apply_classification(self, ed=None):
        """Set the event-driven bits and switch particle modes to match."""
        sim, st, g = self.sim, self.sim.store, self.sim.grid
        n_before = st.n_alive
        if ed is None:
            ed = self.classify()
        g.mask_refresh(ed)
        self.pack()
        ids = st.alive()
        dsmc = ids[st.species[ids] == self.delta]
        in_ed = ed[st.cell[dsmc]]
        t = sim.clock.t
        for i in dsmc[(st.mode[dsmc] == ED) & ~in_ed]:
            self._to_td(int(i))
        for i in dsmc[(st.mode[dsmc] == TD) & in_ed]:
            self._to_ed(int(i), t)
        if st.n_alive != n_before:
            self.dsmc["count_failures"] += 1
        self.check_classification()

    def check_classification(self):
        st, g, q = self.sim.store, self.sim.grid, self.sim.queue
        ids = st.alive()
        ed_cell = (g.mask[st.cell[ids]] & BIT_ED) != 0
        mode = st.mode[ids]
        queued = q.slot[ids] >= 0
        bad = int(np.count_nonzero((mode == ED) & ~ed_cell & (st.species[ids] == self.delta)))
        bad += int(np.count_nonzero((mode == TD) & ed_cell))
        bad += int(np.count_nonzero((mode == TD) & queued))
        if len(q) != int(np.count_nonzero(queued)):
            bad += 1
        if bad:
            self.dsmc["classify_failures"] += bad
        return bad

    # -- lifecycle
    def start(self):
        sim = self.sim
        st = sim.store
        ids = st.alive()
        st.mode[ids] = TD
        st.mode[ids[st.species[ids] != self.delta]] = ED
        ed = self.classify()
        sim.grid.mask_refresh(ed)
        self.pack()
        dsmc = ids[st.species[ids] == self.delta]
        st.mode[dsmc[ed[st.cell[dsmc]]]] = ED
        for i in ids:
            sim.queue.ev_p[i] = P_INVALID
        self.n_max = max(2, int(sim.grid.count[:, self.delta].max(initial=0)))
        super().start()
        sim.external.push(sim.clock.t + self.params.dt, EXT_TIME_STEP)
        if self.params.collision_mode == "event":
            self._schedule_dsmc_event()

    def process_external(self, kind, key, t):
        if kind == EXT_TIME_STEP:
            self.time_step(t)
            self.sim.external.push(t + self.params.dt, EXT_TIME_STEP)
        elif kind == EXT_DSMC:
            self.event_collision(t)
            self._schedule_dsmc_event()

    # -- AED-DSMC collision events in event-driven cells
    def _ed_cells(self):
        return np.nonzero((self.sim.grid.mask & BIT_ED) != 0)[0]

    def _schedule_dsmc_event(self):
        cells = self._ed_cells()
        nm = self.n_max
        rate = self.lam0() * nm * (nm - 1) * len(cells)
        t = next_stochastic_collision_time(self.sim.clock.rng, self.sim.clock.t, rate)
        if t < np.inf:
            self.sim.external.push(t, EXT_DSMC)

    def event_collision(self, t):
        sim, st, g = self.sim, self.sim.store, self.sim.grid
        cells = self._ed_cells()
        if not len(cells):
            return
        rng = sim.clock.rng
        self.dsmc["event_trials"] += 1
        c = int(cells[rng.integers(len(cells))])
        members = [i for i in g.members(c) if st.species[i] == self.delta and st.mode[i] == ED]
        n = len(members)
        if n > self.n_max:
            self.dsmc["nmax_violations"] += 1
            self.n_max = n
        elif rng.random() >= cell_acceptance(n, self.n_max):
            return
        if n < 2:
            return
        i, j, ok, viol = select_pair_rejection(rng, members, st.vel, self.v_rmax[0])
        self.dsmc["candidates"] += 1
        if viol:
            self.dsmc["vrel_violations"] += 1
            self.v_rmax[0] = float(np.linalg.norm(st.vel[i] - st.vel[j]))
            log.info("relative speed bound raised to %g", self.v_rmax[0])
        if not ok:
            return
        q = sim.queue
        for x in (i, j):
            self._sync_one(x, t)
        m = sim.species.mass[self.delta]
        st.vel[i], st.vel[j] = scatter(st.vel[i], st.vel[j], m, m, random_direction(rng, sim.dim))
        self.dsmc["collisions"] += 1
        for x in (i, j):
            q.schedule(int(x), t, 0, 1)

    def _sync_one(self, x, t):
        q = self.sim.queue
        k = q.ev_p[x]
        if x in q:
            q.cancel(x)
        if 1 <= k < P_BOUNDARY and k != x and k in q and q.ev_p[k] == x:
            q.invalidate_third_party(int(k), t)
        st = self.sim.store
        advance(st.pos, st.vel, st.tim, x, t)

    # -- time-step event
    def time_step(self, t):
        sim, st, g, p = self.sim, self.sim.store, self.sim.grid, self.params
        self.steps += 1
        if self.steps % p.refresh_every == 0:
            sim.check_cells()
            self.apply_classification()
        ids = st.alive()
        td = ids[st.mode[ids] == TD]
        if len(td):
            self._advance_td(td, t)
            sim.relocate(td)
            outside = (g.mask[st.cell[td]] & BIT_E) != 0
            for i in td[outside]:
                sim.remove_particle(int(i))
                self.dsmc["removed"] += 1
            td = td[~outside]
        if p.reservoir_density > 0:
            self.insert_reservoir_particles(t)
            ids = st.alive()
            td = ids[st.mode[ids] == TD]
        # time-driven particles that drifted into event-driven cells switch now
        if len(td):
            into_ed = td[(g.mask[st.cell[td]] & BIT_ED) != 0]
            for i in into_ed:
                self._to_ed(int(i), t)
            td = td[(g.mask[st.cell[td]] & BIT_ED) == 0]
        if p.body_acceleration is not None:
            self._kick(np.asarray(p.body_acceleration, dtype=float) * p.dt, t)
        self._collide(t)

    def _advance_td(self, td, t):
        """Ballistic motion to t with specular or thermal reflection at walls."""
        st, g = self.sim.store, self.sim.grid
        rng = self.sim.clock.rng
        rad = self.sim.species.radius[st.species[td]]
        t0 = st.tim[td].copy()
        x = st.pos[td].copy()
        v = st.vel[td].copy()
        remaining = np.full(len(td), True)
        # iterate wall hits until every particle has reached t
        for _ in range(64):
            if not remaining.any():
                break
            k = np.nonzero(remaining)[0]
            hit_t = np.full(len(k), np.inf)
            hit_f = np.full(len(k), -1)
            for ax in range(self.sim.dim):
                for side in (0, 1):
                    if g.kinds[ax, side] not in (WALL, THERMAL):
                        continue
                    wall = rad[k] if side == 0 else g.box[ax] - rad[k]
                    vv = v[k, ax]
                    moving = vv < 0 if side == 0 else vv > 0
                    with np.errstate(divide="ignore", invalid="ignore"):
                        th = np.where(moving, t0[k] + (wall - x[k, ax]) / vv, np.inf)
                    th = np.where(th < t0[k], t0[k], th)
                    better = th < hit_t
                    hit_t[better] = th[better]
                    hit_f[better] = 2 * ax + side
            hits = hit_t <= t
            done = k[~hits]
            x[done] = x[done] + v[done] * (t - t0[done])[:, None]
            t0[done] = t
            remaining[done] = False
            for m in np.nonzero(hits)[0]:
                n = k[m]
                th, f = hit_t[m], hit_f[m]
                x[n] = x[n] + v[n] * (th - t0[n])
                t0[n] = th
                ax, side = divmod(f, 2)
                if g.kinds[ax, side] == THERMAL:
                    v[n] = sample_thermal_velocity(rng, f, self.sim.dim, self.wall_kT,
                                                   self.sim.species.mass[st.species[td[n]]])
                else:
                    v[n, ax] = -v[n, ax]
        st.pos[td] = x
        st.vel[td] = v
        st.tim[td] = t

    def _kick(self, dv, t):
        st = self.sim.store
        ids = st.alive()
        ed = ids[st.mode[ids] == ED]
        for x in ed:
            self._sync_one(int(x), t)
        st.vel[ids] += dv
        for x in ed:
            self.sim.queue.schedule(int(x), t, 0, 1)

    def _collide(self, t):
        sim, st, g = self.sim, self.sim.store, self.sim.grid
        n = g.count[:, self.delta]
        nmax = int(n.max(initial=0))
        if nmax > self.n_max:
            self.n_max = nmax
        lam = self.lam0() * self.params.dt
        only_td = self.params.collision_mode == "event"
        e = lam * n * (n - 1.0)
        draws = int(np.count_nonzero(n >= 2) + 5 * np.sum(np.floor(e[n >= 2]) + 1))
        if draws == 0:
            return
        rand = sim.clock.rng.random(draws)
        members = np.zeros(max(nmax, 2), dtype=np.int64)
        self._dstats[:] = 0
        step_collisions(t, lam, self.delta, only_td, self.v_rmax, rand, self.P, self.Q, self.G,
                        sim.species.mass[self.delta], members, self._synced, self._dstats)
        requeue_synced(t, self._synced, *self.Q, st.capacity)
        self.dsmc["candidates"] += int(self._dstats[0])
        self.dsmc["collisions"] += int(self._dstats[1])
        if self._dstats[2]:
            self.dsmc["vrel_violations"] += int(self._dstats[2])
            log.info("relative speed bound raised to %g", self.v_rmax[0])

    # -- open boundaries
    def insert_reservoir_particles(self, t):
        """Trial particles from ghost cells, started a step ago; returns accepted count."""
        sim, g, p = self.sim, self.sim.grid, self.params
        ghost = np.nonzero(((g.mask & BIT_E) != 0) & ((g.mask & BIT_B) != 0))[0]
        if not len(ghost) or p.reservoir_density <= 0:
            return 0
        rng = sim.clock.rng
        n = rng.poisson(p.reservoir_density * g.cell_volume(), size=len(ghost))
        self.dsmc["reservoir_trials"] += int(n.sum())
        if not n.sum():
            return 0
        cells = np.repeat(ghost, n)
        lo = g.origin + g.coords[cells] * g.csize
        x = lo + rng.random((len(cells), sim.dim)) * g.csize
        m = sim.species.mass[self.delta]
        v = rng.normal(0.0, np.sqrt(p.reservoir_kT / m), (len(cells), sim.dim))
        if p.reservoir_drift is not None:
            v += np.asarray(p.reservoir_drift, dtype=float)
        x = x + v * p.dt
        w, _ = g.wrap(x)
        dest = g.locate_many(w)
        inside = (g.mask[dest] & BIT_E) == 0
        accepted = 0
        for r, vel in zip(x[inside], v[inside]):
            i = sim.add_particle(r, self.delta, vel, mode=TD)
            sim.store.tim[i] = t
            if g.mask[sim.store.cell[i]] & BIT_ED:
                self._to_ed(i, t)
            accepted += 1
        self.dsmc["reservoir_accepted"] += accepted
        return accepted

    # -- host hooks from the kernel
    def extend_halo(self):
        """Cells that just became event driven: switch their DSMC particles."""
        sim, st, g = self.sim, self.sim.store, self.sim.grid
        t = sim.clock.t
        cells = self.halo[: self.halo_n[0]].copy()
        self.halo_n[0] = 0
        for c in cells:
            for i in g.members(int(c)):
                if st.mode[i] != TD:
                    continue
                self._advance_td(np.array([i]), t)
                sim.relocate([i], t)
                if g.mask[st.cell[i]] & BIT_ED:
                    self._to_ed(i, t)

    def synchronize(self, t):
        sim, st = self.sim, self.sim.store
        ids = st.alive()
        td = ids[st.mode[ids] == TD]
        if len(td):
            self._advance_td(td, t)
            sim.relocate(td, t)
        super().synchronize(t)

    def counters(self):
        c = super().counters()
        c.update({"dsmc_" + k: v for k, v in self.dsmc.items()})
        return c

    def state_dict(self):
        d = super().state_dict()
        d.update(v_rmax=self.v_rmax.copy(), n_max=self.n_max, steps=self.steps,
                 dsmc=dict(self.dsmc))
        return d

    def load_state(self, d):
        super().load_state(d)
        self.v_rmax[:] = d["v_rmax"]
        self.n_max = d["n_max"]
        self.steps = d["steps"]
        self.dsmc = dict(d["dsmc"])
