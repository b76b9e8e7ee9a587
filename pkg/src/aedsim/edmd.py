"""Event-driven hard-sphere dynamics.

The event loop for the deterministic backends runs inside compiled kernels that
operate on grouped state tuples:

``P`` particles  (pos, vel, tim, species, mode, img, cell)
``Q`` queue      (ev_t, ev_p, ev_nu, heap, slot, hsize)
``G`` grid       (head, nxt, prv, count, mask, nbr, nbr_shift, ccoord, origin,
                  csize, dims, box, kinds)
``S`` species    (pair_diam, inter_bits, radius, mass, nnl_flag, iparams)
``N`` neighbours (lst, koff, cnt, valid, center, rad, mu)
``L`` event log  (log_t, log_i, log_p, log_nu, log_n)
``W`` work       (gt, stats, halo, halo_n, out, touched)

Positions are unwrapped: a pair separation is always formed as
``(r_i(tau) - r_j(tau)) + k * L`` with an integer image vector ``k``.
Cell transfers and neighbour-list rebuilds never write ``pos``/``tim``; only
collisions and wall hits do. That keeps the trajectory independent of the
bookkeeping grid.

Qualifier codes for boundary events (partner ``P_BOUNDARY``):
``-1`` neighbour-list rebuild, ``-2 - f`` cell transfer through face ``f`` and
``-2 - 2d - f`` wall hit on face ``f``, where ``f = 2 * axis + (1 if moving up)``.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .events import P_BOUNDARY, P_INVALID, heap_pop, heap_push, heap_remove, heap_update
from .nnl import NNL_OVERFLOW, exit_time, nnl_build, nnl_destroy
from .spatial import BIT_E, BIT_ED, PERIODIC, THERMAL, WALL, cell_move

# kernel status codes
ST_OK = 0
ST_LIMIT = 1
ST_EMPTY = 2
ST_MAXN = 3
ST_LOGFULL = 4
ST_THERMAL = 5
ST_HALO = 6
ST_FAULT = 7
ST_NNL_OVERFLOW = 8
ST_TARGET = 9

# stats slots
S_COLL, S_TRANSFER, S_WALL, S_NNL, S_OVERLAP, S_STEAL, S_INVALIDATE, S_ASYM, \
    S_UPDATE, S_TO_TD, S_HALO_CELLS, S_FAULT, S_DEEP_OVERLAP, S_EVENTS = range(14)
N_STATS = 16

# iparams slots
I_DSMC = 0        # DSMC species index or -1
I_HYBRID = 1      # 1 when running the ED/TD hybrid
I_FULLCHECK = 2   # full symmetry scan every this many events (0: never)

NU_COLLIDE = 1
OVERLAP_TOL = 1e-9

ED = 1
TD = 2

_BIT_ED = np.uint64(BIT_ED)
_BIT_E = np.uint64(BIT_E)


@njit(cache=True)
def advance(pos, vel, tim, i, t):
    for ax in range(pos.shape[1]):
        pos[i, ax] = pos[i, ax] + vel[i, ax] * (t - tim[i])
    tim[i] = t


@njit(cache=True)
def pair_time(pos, vel, tim, i, j, k, box, dij):
    """Absolute contact time of i and j for image vector k, or inf.

    Both trajectories are evaluated at tau = max(t_i, t_j) and the quadratic
    |r + v s| = dij is solved with q = -(b + sign(b) sqrt(b^2 - a c)), s = c/q.
    Receding (b >= 0) and grazing (disc <= 0) pairs never collide.
    """
    tau = tim[i] if tim[i] > tim[j] else tim[j]
    a = 0.0
    b = 0.0
    c = 0.0
    for ax in range(pos.shape[1]):
        ri = pos[i, ax] + vel[i, ax] * (tau - tim[i])
        rj = pos[j, ax] + vel[j, ax] * (tau - tim[j])
        r = (ri - rj) + k[ax] * box[ax]
        v = vel[i, ax] - vel[j, ax]
        a += v * v
        b += r * v
        c += r * r
    c -= dij * dij
    if b >= 0.0:
        return np.inf
    disc = b * b - a * c
    if disc <= 0.0:
        return np.inf
    q = np.sqrt(disc) - b
    s = c / q
    if s < 0.0:
        s = 0.0
    return tau + s


@njit(cache=True)
def separation_sq(pos, vel, tim, i, j, k, box, t):
    r2 = 0.0
    for ax in range(pos.shape[1]):
        ri = pos[i, ax] + vel[i, ax] * (t - tim[i])
        rj = pos[j, ax] + vel[j, ax] * (t - tim[j])
        r = (ri - rj) + k[ax] * box[ax]
        r2 += r * r
    return r2


@njit(cache=True)
def transfer_time(pos, vel, tim, img, i, c, ccoord, origin, csize, box):
    """Earliest centroid crossing of a face of cell c: (time, face) or (inf, -1)."""
    best = np.inf
    face = -1
    for ax in range(pos.shape[1]):
        v = vel[i, ax]
        if v > 0.0:
            x = origin[ax] + (ccoord[c, ax] + 1) * csize[ax] + img[i, ax] * box[ax]
            tt = tim[i] + (x - pos[i, ax]) / v
            f = 2 * ax + 1
        elif v < 0.0:
            x = origin[ax] + ccoord[c, ax] * csize[ax] + img[i, ax] * box[ax]
            tt = tim[i] + (x - pos[i, ax]) / v
            f = 2 * ax
        else:
            continue
        if tt < best:
            best = tt
            face = f
    return best, face


@njit(cache=True)
def wall_time(pos, vel, tim, i, c, ccoord, dims, kinds, box, rad):
    """Earliest wall contact for a particle in cell c: (time, face) or (inf, -1)."""
    best = np.inf
    face = -1
    for ax in range(pos.shape[1]):
        v = vel[i, ax]
        if v < 0.0 and ccoord[c, ax] == 0 and (kinds[ax, 0] == WALL or kinds[ax, 0] == THERMAL):
            tt = tim[i] + (rad - pos[i, ax]) / v
            f = 2 * ax
        elif v > 0.0 and ccoord[c, ax] == dims[ax] - 1 and (kinds[ax, 1] == WALL or kinds[ax, 1] == THERMAL):
            tt = tim[i] + ((box[ax] - rad) - pos[i, ax]) / v
            f = 2 * ax + 1
        else:
            continue
        if tt < best:
            best = tt
            face = f
    return best, face


@njit(cache=True)
def elastic_collision(pos, vel, mass, species, i, j, box, kinds):
    """Exchange normal momentum between i and j, both already at contact time."""
    d = pos.shape[1]
    n = np.empty(d)
    r2 = 0.0
    for ax in range(d):
        r = pos[i, ax] - pos[j, ax]
        if kinds[ax, 0] == PERIODIC:
            r -= box[ax] * np.round(r / box[ax])
        n[ax] = r
        r2 += r * r
    inv = 1.0 / np.sqrt(r2)
    vn = 0.0
    for ax in range(d):
        n[ax] *= inv
        vn += (vel[i, ax] - vel[j, ax]) * n[ax]
    mi = mass[species[i]]
    mj = mass[species[j]]
    fi = 2.0 * mj / (mi + mj) * vn
    fj = 2.0 * mi / (mi + mj) * vn
    for ax in range(d):
        vel[i, ax] -= fi * n[ax]
        vel[j, ax] += fj * n[ax]
    return vn


@njit(cache=True)
def _touch(W, x):
    touched = W[5]
    n = touched[0]
    if n < touched.shape[0] - 1:
        touched[n + 1] = x
        touched[0] = n + 1


@njit(cache=True)
def predict(i, t, P, Q, G, S, N, W):
    """Step 9: new record for i (not queued) with partner stealing.

    If the winning partner j had a pair partner k, k is reset to (t, 0, 0)
    in place; j gets the mirrored record and is requeued.
    """
    pos, vel, tim, species, mode, img, cell = P
    ev_t, ev_p, ev_nu, heap, slot, hsize = Q
    head, nxt, prv, count, mask, nbr, nbr_shift, ccoord, origin, csize, dims, box, kinds = G
    pair_diam, inter_bits, radius, mass, nnl_flag, iparams = S
    lst, koff, cnt, valid, center, rad, mu = N
    stats = W[1]
    d = pos.shape[1]
    s = species[i]
    c = cell[i]
    tmin, face = transfer_time(pos, vel, tim, img, i, c, ccoord, origin, csize, box)
    pmin = P_BOUNDARY
    numin = -2 - face
    if tmin == np.inf:
        pmin = 0
        numin = 0
    tw, fw = wall_time(pos, vel, tim, i, c, ccoord, dims, kinds, box, radius[s])
    if tw <= tmin and fw >= 0:
        tmin = tw
        pmin = P_BOUNDARY
        numin = -2 - 2 * d - fw
    use_nnl = nnl_flag[s] and valid[i]
    if use_nnl:
        te = exit_time(pos, vel, tim, i, center[i], rad[i] - radius[s])
        if te < tmin:
            tmin = te
            pmin = P_BOUNDARY
            numin = -1
    if tmin < t:
        tmin = t
    k = np.zeros(d, dtype=np.int64)
    if use_nnl:
        for m in range(cnt[i]):
            j = lst[i, m]
            if mode[j] != ED:
                continue
            dij = pair_diam[s, species[j]]
            if dij <= 0.0:
                continue
            tc = pair_time(pos, vel, tim, i, j, koff[i, m], box, dij)
            if tc < t:
                tc = t
            if tc < tmin and tc < ev_t[j]:
                tmin = tc
                pmin = j
                numin = NU_COLLIDE
    bits = inter_bits[s]
    for q in range(nbr.shape[1]):
        cn = nbr[c, q]
        if cn < 0 or (mask[cn] & bits) == 0:
            continue
        j = head[cn]
        while j >= 0:
            if j != i and mode[j] == ED:
                sj = species[j]
                dij = pair_diam[s, sj]
                if dij > 0.0 and not (use_nnl and nnl_flag[sj] and valid[j]):
                    for ax in range(d):
                        k[ax] = img[j, ax] - img[i, ax] - nbr_shift[c, q, ax]
                    tc = pair_time(pos, vel, tim, i, j, k, box, dij)
                    if tc < t:
                        tc = t
                    if tc < tmin and tc < ev_t[j]:
                        tmin = tc
                        pmin = j
                        numin = NU_COLLIDE
            j = nxt[j]
    if 1 <= pmin < P_BOUNDARY:
        j = pmin
        kk = ev_p[j]
        if slot[j] >= 0:
            heap_remove(ev_t, heap, slot, hsize, j)
        if 1 <= kk < P_BOUNDARY and kk != j and kk != i:
            ev_p[kk] = 0
            ev_nu[kk] = 0
            if slot[kk] >= 0:
                heap_update(ev_t, heap, slot, hsize, kk, t)
            stats[S_INVALIDATE] += 1
            _touch(W, kk)
        ev_t[j] = tmin
        ev_p[j] = i
        ev_nu[j] = numin
        heap_push(ev_t, heap, slot, hsize, j)
        stats[S_STEAL] += 1
        _touch(W, j)
    ev_t[i] = tmin
    ev_p[i] = pmin
    ev_nu[i] = numin
    _touch(W, i)


@njit(cache=True)
def overlap_scan(i, t, P, G, S):
    """Count interacting event-driven neighbours overlapping i at time t."""
    pos, vel, tim, species, mode, img, cell = P
    head, nxt, prv, count, mask, nbr, nbr_shift, ccoord, origin, csize, dims, box, kinds = G
    pair_diam, inter_bits, radius, mass, nnl_flag, iparams = S
    d = pos.shape[1]
    k = np.zeros(d, dtype=np.int64)
    c = cell[i]
    s = species[i]
    n = 0
    deep = 0
    for q in range(nbr.shape[1]):
        cn = nbr[c, q]
        if cn < 0:
            continue
        j = head[cn]
        while j >= 0:
            if j != i and mode[j] == ED:
                dij = pair_diam[s, species[j]]
                if dij > 0.0:
                    for ax in range(d):
                        k[ax] = img[j, ax] - img[i, ax] - nbr_shift[c, q, ax]
                    r2 = separation_sq(pos, vel, tim, i, j, k, box, t)
                    lim = dij * (1.0 - OVERLAP_TOL)
                    if r2 < lim * lim:
                        n += 1
                        if r2 < 0.25 * dij * dij:
                            deep += 1
            j = nxt[j]
    return n, deep


@njit(cache=True)
def _check_touched(Q, W):
    ev_t, ev_p, ev_nu, heap, slot, hsize = Q
    touched = W[5]
    stats = W[1]
    for m in range(1, touched[0] + 1):
        x = touched[m]
        if slot[x] < 0:
            continue
        p = ev_p[x]
        if 1 <= p < P_BOUNDARY and p != x:
            if ev_p[p] != x or ev_t[p] != ev_t[x] or slot[p] < 0:
                stats[S_ASYM] += 1
    touched[0] = 0


@njit(cache=True)
def full_symmetry_scan(Q):
    ev_t, ev_p, ev_nu, heap, slot, hsize = Q
    bad = 0
    for m in range(hsize[0]):
        x = heap[m]
        p = ev_p[x]
        if 1 <= p < P_BOUNDARY and p != x:
            if ev_p[p] != x or ev_t[p] != ev_t[x] or slot[p] < 0:
                bad += 1
    return bad


@njit(cache=True)
def _rebuild_nnl(i, t, P, G, S, N):
    pos, vel, tim, species, mode, img, cell = P
    head, nxt, prv, count, mask, nbr, nbr_shift, ccoord, origin, csize, dims, box, kinds = G
    pair_diam, inter_bits, radius, mass, nnl_flag, iparams = S
    lst, koff, cnt, valid, center, rad, mu = N
    if valid[i]:
        nnl_destroy(i, lst, koff, cnt, valid)
    return nnl_build(i, t, pos, vel, tim, species, mode, img, cell, head, nxt, nbr, nbr_shift,
                     box, nnl_flag, radius, mu[0], lst, koff, cnt, valid, center, rad)


@njit(cache=True)
def predict_schedule(i, t, P, Q, G, S, N, W):
    ev_t, ev_p, ev_nu, heap, slot, hsize = Q
    predict(i, t, P, Q, G, S, N, W)
    heap_push(ev_t, heap, slot, hsize, i)
    _check_touched(Q, W)


@njit(cache=True)
def _log(L, t, i, p, nu):
    log_t, log_i, log_p, log_nu, log_n = L
    n = log_n[0]
    log_t[n] = t
    log_i[n] = i
    log_p[n] = p
    log_nu[n] = nu
    log_n[0] = n + 1


@njit(cache=True)
def process_next(P, Q, G, S, N, L, W):
    """Pop the queue top and process it (steps 4-10). Returns a status code."""
    pos, vel, tim, species, mode, img, cell = P
    ev_t, ev_p, ev_nu, heap, slot, hsize = Q
    head, nxt, prv, count, mask, nbr, nbr_shift, ccoord, origin, csize, dims, box, kinds = G
    pair_diam, inter_bits, radius, mass, nnl_flag, iparams = S
    lst, koff, cnt, valid, center, rad, mu = N
    gt, stats, halo, halo_n, out, touched = W
    d = pos.shape[1]
    i = heap_pop(ev_t, heap, slot, hsize)
    t = ev_t[i]
    p = ev_p[i]
    nu = ev_nu[i]
    if t > gt[0]:
        gt[0] = t
    _log(L, t, i, p, nu)
    stats[S_EVENTS] += 1
    out[0] = i
    out[1] = p
    out[2] = nu
    touched[0] = 0
    dsmc = iparams[I_DSMC]
    hybrid = iparams[I_HYBRID] == 1
    s = species[i]

    if p == 0:
        stats[S_UPDATE] += 1
        if nu == -1:
            n_ov, deep = overlap_scan(i, t, P, G, S)
            stats[S_OVERLAP] += n_ov
            stats[S_DEEP_OVERLAP] += deep
            if nnl_flag[s]:
                if _rebuild_nnl(i, t, P, G, S, N) == NNL_OVERFLOW:
                    stats[S_FAULT] += 1
                    heap_push(ev_t, heap, slot, hsize, i)
                    return ST_NNL_OVERFLOW
    elif p == i:
        advance(pos, vel, tim, i, t)
    elif p == P_BOUNDARY:
        if nu == -1:
            stats[S_NNL] += 1
            if _rebuild_nnl(i, t, P, G, S, N) == NNL_OVERFLOW:
                stats[S_FAULT] += 1
                ev_p[i] = 0
                ev_nu[i] = 0
                heap_push(ev_t, heap, slot, hsize, i)
                return ST_NNL_OVERFLOW
        elif nu <= -2 - 2 * d:
            f = -2 - 2 * d - nu
            ax = f // 2
            stats[S_WALL] += 1
            advance(pos, vel, tim, i, t)
            if kinds[ax, f % 2] == THERMAL:
                out[3] = f
                return ST_THERMAL
            vel[i, ax] = -vel[i, ax]
        else:
            f = -2 - nu
            ax = f // 2
            up = f % 2 == 1
            c = cell[i]
            cc = ccoord[c, ax] + (1 if up else -1)
            if kinds[ax, 0] == PERIODIC:
                if cc >= dims[ax]:
                    cc -= dims[ax]
                    img[i, ax] += 1
                elif cc < 0:
                    cc += dims[ax]
                    img[i, ax] -= 1
            elif cc < 0 or cc >= dims[ax]:
                stats[S_FAULT] += 1
                out[3] = f
                return ST_FAULT
            stride = 1
            for b in range(d - 1, ax, -1):
                stride *= dims[b]
            new = c + (cc - ccoord[c, ax]) * stride
            cell_move(i, new, s, head, nxt, prv, count, mask, cell)
            stats[S_TRANSFER] += 1
            if hybrid:
                if s == dsmc:
                    if (mask[new] & _BIT_ED) == 0:
                        advance(pos, vel, tim, i, t)
                        mode[i] = TD
                        ev_p[i] = P_INVALID
                        stats[S_TO_TD] += 1
                        return ST_OK
                else:
                    if (mask[new] & _BIT_E) != 0:
                        stats[S_FAULT] += 1
                        out[3] = f
                        return ST_FAULT
                    for q in range(nbr.shape[1]):
                        cn = nbr[new, q]
                        if cn >= 0 and (mask[cn] & _BIT_ED) == 0:
                            mask[cn] |= _BIT_ED
                            halo[halo_n[0]] = cn
                            halo_n[0] += 1
                            stats[S_HALO_CELLS] += 1
    elif p >= 1 and p < P_BOUNDARY:
        j = p
        if slot[j] < 0 or ev_p[j] != i or mode[j] != ED:
            stats[S_FAULT] += 1
            out[3] = j
            return ST_FAULT
        heap_remove(ev_t, heap, slot, hsize, j)
        advance(pos, vel, tim, i, t)
        advance(pos, vel, tim, j, t)
        vn = elastic_collision(pos, vel, mass, species, i, j, box, kinds)
        if vn >= 0.0:
            stats[S_FAULT] += 1
        stats[S_COLL] += 1
        ev_t[j] = t
        ev_p[j] = 0
        ev_nu[j] = 0
        heap_push(ev_t, heap, slot, hsize, j)
        _touch(W, j)
    else:
        stats[S_FAULT] += 1
        return ST_FAULT

    predict_schedule(i, t, P, Q, G, S, N, W)
    if halo_n[0] > 0:
        return ST_HALO
    return ST_OK


@njit(cache=True)
def run_events(P, Q, G, S, N, L, W, t_stop, max_events, coll_target):
    """Process events until the next one lies beyond t_stop (strictly), the
    event budget is spent, the collision count reaches coll_target, or a
    status needs the host. Returns (status, events processed)."""
    ev_t, ev_p, ev_nu, heap, slot, hsize = Q
    log_t, log_i, log_p, log_nu, log_n = L
    stats = W[1]
    pair_diam, inter_bits, radius, mass, nnl_flag, iparams = S
    full_every = iparams[I_FULLCHECK]
    cap = log_t.shape[0]
    n = 0
    while n < max_events:
        if hsize[0] == 0:
            return ST_EMPTY, n
        if ev_t[heap[0]] > t_stop:
            return ST_LIMIT, n
        if log_n[0] >= cap:
            return ST_LOGFULL, n
        st = process_next(P, Q, G, S, N, L, W)
        n += 1
        if full_every > 0 and stats[S_EVENTS] % full_every == 0:
            stats[S_ASYM] += full_symmetry_scan(Q)
        if st != ST_OK:
            return st, n
        if stats[S_COLL] >= coll_target:
            return ST_TARGET, n
    return ST_MAXN, n


# ------------------------------------------------------------------ host side

class EDMDError(RuntimeError):
    pass


def sample_thermal_velocity(rng, face, dim, kT, mass):
    """Velocity leaving a thermal wall on ``face`` (flux-weighted normal part)."""
    sig = np.sqrt(kT / mass)
    v = rng.normal(0.0, sig, dim)
    vn = sig * np.sqrt(-2.0 * np.log(1.0 - rng.random()))
    ax = face // 2
    v[ax] = -vn if face % 2 == 1 else vn
    return v


class EDMDBackend:
    """Host driver around the compiled event kernels."""

    name = "edmd"
    log_capacity = 1 << 15

    def __init__(self, sim, wall_temperature=1.0, full_check_every=0):
        self.sim = sim
        self.wall_kT = float(wall_temperature)
        self.stats = np.zeros(N_STATS, dtype=np.int64)
        self.gt = np.zeros(1)
        self.halo = np.zeros(sim.grid.n_cells, dtype=np.int64)
        self.halo_n = np.zeros(1, dtype=np.int64)
        self.out = np.zeros(4, dtype=np.int64)
        self.touched = np.zeros(16, dtype=np.int64)
        self.log_t = np.zeros(self.log_capacity)
        self.log_i = np.zeros(self.log_capacity, dtype=np.int64)
        self.log_p = np.zeros(self.log_capacity, dtype=np.int64)
        self.log_nu = np.zeros(self.log_capacity, dtype=np.int64)
        self.log_n = np.zeros(1, dtype=np.int64)
        self.iparams = np.array([-1, 0, full_check_every], dtype=np.int64)
        self.pack()

    # the state tuples hold array references, so they are rebuilt after growth
    def pack(self):
        sim = self.sim
        st, q, g, sp, nl = sim.store, sim.queue, sim.grid, sim.species, sim.nnl
        self.P = (st.pos, st.vel, st.tim, st.species, st.mode, st.img, st.cell)
        self.Q = (q.ev_t, q.ev_p, q.ev_nu, q.heap, q.slot, q.hsize)
        self.G = (g.head, g.nxt, g.prv, g.count, g.mask, g.nbr, g.nbr_shift, g.coords,
                  g.origin, g.csize, g.dims, g.box, g.kinds)
        self.S = (sp.pair_diameter, sp.interaction_bits, sp.radius, sp.mass,
                  sp.nnl & sim.use_nnl, self.iparams)
        self.N = (nl.lst, nl.koff, nl.cnt, nl.valid, nl.center, nl.rad, np.array([nl.mu]))
        self.L = (self.log_t, self.log_i, self.log_p, self.log_nu, self.log_n)
        self.W = (self.gt, self.stats, self.halo, self.halo_n, self.out, self.touched)

    @property
    def grid_mask_changed(self):
        return self.G[4] is not self.sim.grid.mask

    def start(self):
        sim = self.sim
        for i in sim.store.alive():
            if sim.store.mode[i] == ED and i not in sim.queue:
                sim.queue.schedule(int(i), sim.clock.t, 0, -1)

    def drain_log(self):
        n = int(self.log_n[0])
        if n:
            self.sim.log.extend(self.log_t[:n], self.log_i[:n], self.log_p[:n], self.log_nu[:n])
            self.log_n[0] = 0

    def run_particles(self, t_stop, max_events, coll_target=np.iinfo(np.int64).max):
        """Process particle events with t_e <= t_stop. Returns (events, reason)."""
        sim = self.sim
        if self.G[4] is not sim.grid.mask:
            self.pack()
        self.gt[0] = sim.clock.t
        done = 0
        while done < max_events:
            st, n = run_events(self.P, self.Q, self.G, self.S, self.N, self.L, self.W,
                               t_stop, max_events - done, coll_target)
            done += n
            sim.clock.t = float(self.gt[0])
            self.drain_log()
            if st == ST_OK or st == ST_LOGFULL:
                continue
            if st == ST_THERMAL:
                self.thermal_wall(int(self.out[0]), int(self.out[3]))
            elif st == ST_HALO:
                self.extend_halo()
            elif st == ST_NNL_OVERFLOW:
                i = int(self.out[0])
                sim.nnl.grow(sim.nnl.capacity, 2 * sim.nnl.width)
                if i in sim.queue:
                    sim.queue.cancel(i)
                sim.queue.schedule(i, sim.clock.t, 0, -1)
                self.pack()
            elif st == ST_FAULT:
                raise EDMDError(f"invalid event for particle {self.out[0]}: partner {self.out[1]}, "
                                f"qualifier {self.out[2]}, detail {self.out[3]}")
            else:
                return done, st
        return done, ST_MAXN

    def thermal_wall(self, i, face):
        sim = self.sim
        s = sim.store.species[i]
        sim.store.vel[i] = sample_thermal_velocity(sim.clock.rng, face, sim.dim, self.wall_kT,
                                                   sim.species.mass[s])
        self.after_velocity_change(i)
        predict_schedule(i, sim.clock.t, self.P, self.Q, self.G, self.S, self.N, self.W)

    def after_velocity_change(self, i):
        pass

    def extend_halo(self):
        self.halo_n[0] = 0

    def predict_next_event(self, i):
        """Recompute i's prediction now (i must not be queued); returns the record."""
        sim = self.sim
        if i in sim.queue:
            sim.queue.cancel(i)
        predict(i, sim.clock.t, self.P, self.Q, self.G, self.S, self.N, self.W)
        self.touched[0] = 0
        return sim.queue.record(i)

    def schedule_predicted(self, i):
        heap_push(self.Q[0], self.Q[3], self.Q[4], self.Q[5], i)

    def synchronize(self, t):
        sim = self.sim
        ids = sim.store.alive()
        ids = ids[sim.store.mode[ids] == ED]
        for i in ids:
            advance(sim.store.pos, sim.store.vel, sim.store.tim, i, t)
        for i in ids:
            sim.queue.discard(int(i))
        self.sim.relocate(ids)
        for i in ids:
            sim.queue.schedule(int(i), t, 0, -1)

    def cell_positions(self, ids):
        """Wrapped positions against which cell membership is checked."""
        sim = self.sim
        st = sim.store
        p = st.pos[ids] + st.vel[ids] * (sim.clock.t - st.tim[ids])[:, None]
        per = sim.grid.periodic
        p[:, per] -= st.img[ids][:, per] * sim.grid.box[per]
        return p

    def overlaps(self, i, t=None):
        t = self.sim.clock.t if t is None else t
        return overlap_scan(i, t, self.P, self.G, self.S)[0]

    def counters(self):
        names = ["collisions", "transfers", "walls", "nnl_rebuilds", "overlaps", "steals",
                 "invalidations", "asymmetries", "updates", "to_time_driven", "halo_cells",
                 "faults", "deep_overlaps", "events"]
        return {n: int(self.stats[k]) for k, n in enumerate(names)}

    def state_dict(self):
        return {"stats": self.stats.copy(), "gt": self.gt.copy(), "wall_kT": self.wall_kT}

    def load_state(self, d):
        self.stats[:] = d["stats"]
        self.gt[:] = d["gt"]
        self.wall_kT = d["wall_kT"]
