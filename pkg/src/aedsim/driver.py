"""The top-level event loop and the :class:`Simulation` container.

One loop serves all backends. Each pass compares the queue top ``t_e`` with
the next external event ``t_ex``: externals run first only when strictly
earlier, otherwise the backend processes particle events up to ``t_ex``.
Particle events for the deterministic backends run in compiled batches; the
loop only regains control when a host action is needed.
"""
from __future__ import annotations

import io
import logging
import pickle
from dataclasses import dataclass, field

import numpy as np

from .events import (EXT_REFRESH, EXTERNAL_NAMES, EventQueue, EventRecord, ExternalEventSource,
                     P_BOUNDARY, P_INVALID)
from .model import ABSENT, EVENT_DRIVEN, TIME_DRIVEN, ParticleStore, SimulationClock, SpeciesTable
from .nnl import NeighborLists
from .spatial import BIT_B, BIT_E, CellGrid, SpatialError

log = logging.getLogger("aedsim")

SNAPSHOT_MAGIC = b"AEDSNAP1"


class SimulationError(RuntimeError):
    pass


@dataclass
class EventLogEntry:
    seq: int
    time: float
    particle: int
    partner: int
    qualifier: int
    payload: dict = field(default_factory=dict)

    @property
    def external(self):
        return self.particle == 0

    @property
    def kind(self):
        return EXTERNAL_NAMES.get(self.qualifier) if self.external else None


class EventLog:
    """Columnar record of processed events.

    External events are stored with particle 0, partner 0 and the external
    kind code as qualifier.
    """

    def __init__(self, keep=True):
        self.keep = keep
        self.count = 0
        self._chunks = []
        self._pending = []
        self.sinks = []

    def extend(self, t, i, p, nu):
        n = len(t)
        if not n:
            return
        chunk = (np.array(t, dtype=float), np.array(i, dtype=np.int64),
                 np.array(p, dtype=np.int64), np.array(nu, dtype=np.int64))
        self._flush_pending()
        first = self.count
        self.count += n
        if self.keep:
            self._chunks.append(chunk)
        for sink in self.sinks:
            sink(first, *chunk)

    def append(self, t, i, p, nu):
        self._pending.append((t, i, p, nu))
        if len(self._pending) >= 4096:
            self._flush_pending()

    def _flush_pending(self):
        if not self._pending:
            return
        rows = self._pending
        self._pending = []
        t, i, p, nu = zip(*rows)
        self.extend(t, i, p, nu)

    def flush(self):
        self._flush_pending()

    def __len__(self):
        return self.count + len(self._pending)

    def arrays(self):
        self._flush_pending()
        if not self._chunks:
            return np.zeros(0), *(np.zeros(0, dtype=np.int64) for _ in range(3))
        return tuple(np.concatenate([c[k] for c in self._chunks]) for k in range(4))

    def entries(self, start=0):
        t, i, p, nu = self.arrays()
        base = self.count - len(t)
        return [EventLogEntry(base + k, float(t[k]), int(i[k]), int(p[k]), int(nu[k]))
                for k in range(max(0, start - base), len(t))]

    def last(self):
        """The most recent entry, or None for an empty log."""
        seq = len(self) - 1
        if self._pending:
            t, i, p, nu = self._pending[-1]
        elif self._chunks:
            t, i, p, nu = (c[-1] for c in self._chunks[-1])
        else:
            return None
        return EventLogEntry(seq, float(t), int(i), int(p), int(nu))

    def clear(self):
        self._flush_pending()
        self._chunks = []


def required_cell_size(species: SpeciesTable, use_nnl=False, mu=1.3):
    """Smallest cell side for which 3^d-cell scans find every candidate."""
    size = species.max_pair_diameter()
    if use_nnl and species.nnl.any():
        r = species.radius
        for a in np.nonzero(species.nnl)[0]:
            for b in np.nonzero(species.nnl)[0]:
                if species.interaction[a, b]:
                    size = max(size, mu * r[a] + 2 * mu * r[b] - r[b])
    return size


class Simulation:
    """Owns every piece of state and runs the event loop.

    Parameters mirror the configuration file (see ``aedsim.io.config``); most
    users build instances through :func:`aedsim.io.config.build_simulation`.
    """

    def __init__(self, species, box, boundaries, backend="edmd", seed=0, *, cell_size=None,
                 ncells=None, mu=1.3, use_nnl=False, capacity=64, w_bi=1, w_be=1,
                 wall_temperature=1.0, dsmc=None, fpkmc=None, check_every=0, keep_log=True,
                 nnl_width=32):
        self._init_args = dict(species=species, box=list(map(float, box)),
                               boundaries=boundaries, backend=backend, seed=seed,
                               cell_size=cell_size, ncells=ncells, mu=mu, use_nnl=use_nnl,
                               capacity=capacity, w_bi=w_bi, w_be=w_be,
                               wall_temperature=wall_temperature, dsmc=dsmc, fpkmc=fpkmc,
                               check_every=check_every, keep_log=keep_log, nnl_width=nnl_width)
        box = np.asarray(box, dtype=float)
        self.dim = int(box.shape[0])
        self.species = species
        self.use_nnl = bool(use_nnl)
        self.backend_name = backend
        self.clock = SimulationClock(seed)
        self.store = ParticleStore(self.dim, capacity)
        need = required_cell_size(species, use_nnl, mu)
        if backend == "fpkmc":
            from .fpkmc import fpkmc_cell_size
            need = max(need, fpkmc_cell_size(species, fpkmc))
        if cell_size is not None and cell_size < need * (1 - 1e-12):
            raise SimulationError(f"cell size {cell_size} is below the interaction reach {need}")
        self.grid = CellGrid(box, boundaries, len(species), capacity,
                             min_cell_size=cell_size or need if ncells is None else None,
                             ncells=ncells, w_bi=w_bi, w_be=w_be)
        if (self.grid.csize < need * (1 - 1e-12)).any():
            raise SimulationError(f"cell size {self.grid.csize} is below the interaction reach {need}")
        if backend in ("edmd", "sedmd") and (self.grid.periodic & (self.grid.dims < 3)).any():
            raise SimulationError("periodic axes need at least three cells")
        self.queue = EventQueue(capacity)
        self.nnl = NeighborLists(self.dim, capacity, mu, width=nnl_width)
        self.external = ExternalEventSource()
        self.log = EventLog(keep_log)
        self.check_every = int(check_every)
        self.violations = {"symmetry": 0, "disjointness": 0, "cells": 0, "overlap": 0}
        self.started = False
        if backend == "edmd":
            from .edmd import EDMDBackend
            self.backend = EDMDBackend(self, wall_temperature=wall_temperature,
                                       full_check_every=check_every)
        elif backend == "sedmd":
            from .dsmc import SEDMDBackend
            self.backend = SEDMDBackend(self, dsmc, wall_temperature=wall_temperature,
                                        full_check_every=check_every)
        elif backend == "fpkmc":
            from .fpkmc import FPKMCBackend
            self.backend = FPKMCBackend(self, fpkmc)
        else:
            raise SimulationError(f"unknown backend {backend!r}")

    # ---------------------------------------------------------------- setup
    @property
    def t(self):
        return self.clock.t

    def ensure_capacity(self, extra=1):
        st = self.store
        free = len(st._free) + st.capacity - st.high
        if free >= extra:
            return
        cap = max(2 * st.capacity, st.capacity + extra, 16)
        for part in (st, self.grid, self.queue, self.nnl):
            part.grow(cap)
        self.backend.pack()

    def add_particle(self, position, species, velocity=None, mode=EVENT_DRIVEN):
        """Insert a particle at the current time; returns its id.

        Once the run has started the particle is queued with an update event so
        overlaps are checked and its first prediction is made.
        """
        self.ensure_capacity()
        st = self.store
        i = st.allocate()
        w, im = self.grid.wrap(np.asarray(position, dtype=float))
        st.pos[i] = w
        st.img[i] = 0
        st.vel[i] = 0.0 if velocity is None else velocity
        st.tim[i] = self.clock.t
        st.species[i] = species
        st.mode[i] = mode
        c = self.grid.locate_cell(w)
        try:
            self.grid.insert(i, c, species, st.cell)
        except SpatialError:
            st.release(i)
            raise
        self.queue.ev_p[i] = P_INVALID
        if self.started and mode == EVENT_DRIVEN:
            self.queue.schedule(i, self.clock.t, 0, -1)
        return i

    def add_particles(self, positions, species, velocities=None, mode=EVENT_DRIVEN):
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        species = np.broadcast_to(np.asarray(species, dtype=np.int64), (len(positions),))
        self.ensure_capacity(len(positions))
        ids = []
        for k, r in enumerate(positions):
            v = None if velocities is None else velocities[k]
            ids.append(self.add_particle(r, int(species[k]), v, mode))
        return np.array(ids, dtype=np.int64)

    def remove_particle(self, i):
        st = self.store
        self.queue.discard(i)
        if self.nnl.valid[i]:
            self.nnl.destroy(i)
        if st.cell[i] >= 0:
            self.grid.remove(i, st.species[i], st.cell)
        st.release(i)

    def current_positions(self, ids=None, t=None):
        """Unwrapped positions of ``ids`` at time t along their current paths."""
        st = self.store
        ids = st.alive() if ids is None else np.asarray(ids)
        t = self.clock.t if t is None else t
        return self.backend.positions_at(ids, t) if hasattr(self.backend, "positions_at") else \
            st.pos[ids] + st.vel[ids] * (t - st.tim[ids])[:, None]

    def wrapped(self, ids=None, t=None):
        st = self.store
        ids = st.alive() if ids is None else np.asarray(ids)
        p = self.current_positions(ids, t)
        box = self.grid.box
        per = self.grid.periodic
        p[:, per] -= st.img[ids][:, per] * box[per]
        return p

    def relocate(self, ids, t=None):
        """Re-sort particles into the cells of their positions at time t."""
        from .spatial import relocate_many
        st = self.store
        ids = np.asarray(ids, dtype=np.int64)
        if not len(ids):
            return
        p = self.current_positions(ids, t)
        w, im = self.grid.wrap(p, st.img[ids])
        st.img[ids] = im
        cells = self.grid.locate_many(w)
        relocate_many(ids, cells, st.species, self.grid.head, self.grid.nxt, self.grid.prv,
                      self.grid.count, self.grid.mask, st.cell)

    def start(self):
        if self.started:
            return
        self.started = True
        self.backend.start()

    # ---------------------------------------------------------------- loop
    def step(self):
        """Process exactly one event (particle or external); returns its log entry."""
        n0 = len(self.log)
        done = self.run(max_events=1)
        if not done:
            return None
        return self.log.last() if self.log.keep and len(self.log) > n0 else None

    event_loop_step = step

    def run(self, max_events=None, t_max=None, max_collisions=None):
        """Run until the event budget, time limit or collision target is hit.

        Returns the number of events processed.
        """
        self.start()
        budget = np.iinfo(np.int64).max if max_events is None else int(max_events)
        t_max = np.inf if t_max is None else float(t_max)
        target = np.iinfo(np.int64).max
        if max_collisions is not None:
            target = self.backend.counters()["collisions"] + int(max_collisions)
        done = 0
        while done < budget:
            t_ex = self.external.peek_time()
            t_e = self.queue.peek_time()
            if min(t_ex, t_e) > t_max or min(t_ex, t_e) == np.inf:
                break
            if t_ex < t_e:
                self._process_external()
                done += 1
            else:
                n, status = self.backend.run_particles(min(t_ex, t_max), budget - done, target)
                done += n
                if self.backend.counters()["collisions"] >= target:
                    break
        self.log.flush()
        self.clock.event_count += done
        return done

    def _process_external(self):
        t, seq, kind, key = self.external.pop()
        self.clock.advance(t)
        self.log.append(t, 0, 0, kind)
        if kind == EXT_REFRESH:
            self.refresh(key)
        else:
            self.backend.process_external(kind, key, t)

    def refresh(self, period=0):
        """Mask refresh with a cell consistency check; reschedules itself."""
        self.check_cells()
        self._mask_refresh()
        if period:
            self.external.push(self.clock.t + period, EXT_REFRESH, period)

    def schedule_refresh(self, period):
        """Mask refresh (with a cell check) every ``period`` time units from now."""
        if period <= 0:
            raise SimulationError("refresh period must be positive")
        self.external.push(self.clock.t + period, EXT_REFRESH, period)

    def _mask_refresh(self):
        if hasattr(self.backend, "apply_classification"):
            self.backend.apply_classification()
        else:
            self.grid.mask_refresh(self.backend.classify() if hasattr(self.backend, "classify") else None)

    def predict_next_event(self, i) -> EventRecord:
        return self.backend.predict_next_event(i)

    def synchronize_all(self, to=None):
        """Bring every particle to time ``to`` and restart event processing."""
        to = self.clock.t if to is None else float(to)
        if to < self.clock.t:
            raise SimulationError("cannot synchronize into the past")
        self.clock.advance(to)
        self.backend.synchronize(to)
        self.grid.partition_domain()
        self._mask_refresh()
        st = self.store
        ids = st.alive()
        bad = ids[[bool(self.grid.mask[c] & BIT_E) and not bool(self.grid.mask[c] & BIT_B)
                   for c in st.cell[ids]]] if len(ids) else ids
        for i in bad:
            self.remove_particle(int(i))

    # ---------------------------------------------------------------- checks
    def check_schedule_symmetry(self):
        q, st = self.queue, self.store
        group = getattr(self.backend, "group", None)
        bad = 0
        for i in q.heap[: len(q)]:
            p = q.ev_p[i]
            if 1 <= p < P_BOUNDARY and p != i:
                grp = group(i) if group is not None else ()
                if len(grp) > 2:
                    # group events are scheduled as a cycle over the members
                    if p not in grp or p not in q or q.ev_t[p] != q.ev_t[i]:
                        bad += 1
                elif q.ev_p[p] != i or q.ev_t[p] != q.ev_t[i] or p not in q:
                    bad += 1
        td = st.alive()
        td = td[st.mode[td] == TIME_DRIVEN]
        if len(td) and ((q.slot[td] >= 0).any() or (q.ev_p[td] != P_INVALID).any()):
            bad += 1
        self.violations["symmetry"] += bad
        return bad

    def check_cells(self):
        st = self.store
        ids = st.alive()
        try:
            self.grid.check(self.backend.cell_positions(ids), st.cell, ids, st.species)
        except SpatialError as exc:
            self.violations["cells"] += 1
            log.error("cell check failed: %s", exc)
            return 1
        return 0

    def check_invariants(self):
        bad = self.check_schedule_symmetry() + self.check_cells()
        self.queue.check()
        if hasattr(self.backend, "check_disjoint"):
            n = self.backend.check_disjoint()
            self.violations["disjointness"] += n
            bad += n
        return bad

    # ---------------------------------------------------------------- state
    def state_dict(self):
        self.log.flush()
        return {
            "init": self._init_args,
            "clock": {"t": self.clock.t, "event_count": self.clock.event_count,
                      "rng": self.clock.save_rng_state()},
            "store": self.store.state_dict(),
            "queue": self.queue.state_dict(),
            "grid": self.grid.state_dict(),
            "nnl": self.nnl.state_dict(),
            "external": self.external.state_dict(),
            "backend": self.backend.state_dict(),
            "log_count": len(self.log),
            "started": self.started,
            "violations": dict(self.violations),
        }

    def snapshot(self) -> bytes:
        buf = io.BytesIO()
        p = pickle.Pickler(buf, protocol=4)
        # without the memo the bytes depend on values only, not on object identity,
        # so a restored simulation snapshots to the same bytes
        p.fast = True
        p.dump(self.state_dict())
        return SNAPSHOT_MAGIC + buf.getvalue()

    @classmethod
    def from_state(cls, d, keep_log=None):
        args = dict(d["init"])
        if keep_log is not None:
            args["keep_log"] = keep_log
        sim = cls(**args)
        sim.clock.t = d["clock"]["t"]
        sim.clock.event_count = d["clock"]["event_count"]
        sim.clock.restore_rng_state(d["clock"]["rng"])
        sim.store = ParticleStore.from_state(d["store"])
        sim.queue = EventQueue.from_state(d["queue"])
        sim.grid.load_state(d["grid"])
        sim.nnl.load_state(d["nnl"])
        sim.external = ExternalEventSource.from_state(d["external"])
        sim.backend.load_state(d["backend"])
        sim.log.count = d["log_count"]
        sim.started = d["started"]
        sim.violations = dict(d["violations"])
        sim.backend.pack()
        return sim

    @classmethod
    def restore(cls, blob: bytes, keep_log=None):
        if not blob.startswith(SNAPSHOT_MAGIC):
            raise SimulationError("not a snapshot (bad magic header)")
        return cls.from_state(pickle.loads(blob[len(SNAPSHOT_MAGIC):]), keep_log=keep_log)
