"""Line-delimited run records: event log, snapshots and per-cell averages.

Every text file starts with a header line ``{"format": ..., "version": 1}``
followed by one JSON object per line with a fixed field order. Floats are
written with ``repr`` so they read back bit-exactly. Snapshots are binary
(see :meth:`aedsim.driver.Simulation.snapshot`) and carry their own magic.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from ..driver import EventLogEntry
from ..events import EXTERNAL_NAMES

VERSION = 1
EVENT_FORMAT = "aedsim-events"
AVERAGES_FORMAT = "aedsim-cell-averages"
PARTIAL_MARKER = {"partial": True}
EVENT_FIELDS = ("seq", "time", "particle", "partner", "qualifier")


class RecordError(ValueError):
    pass


def header(fmt):
    return json.dumps({"format": fmt, "version": VERSION})


def _check_header(line, fmt):
    try:
        h = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RecordError(f"bad header: {exc}") from None
    if h.get("format") != fmt or h.get("version") != VERSION:
        raise RecordError(f"expected {fmt} version {VERSION}, got {h}")


# ---------------------------------------------------------------- event log
def event_line(seq, t, i, p, nu, payload=None):
    """One event as a JSON object with the fields in EVENT_FIELDS order."""
    rec = {"seq": int(seq), "time": float(t), "particle": int(i), "partner": int(p),
           "qualifier": int(nu)}
    if i == 0 and int(nu) in EXTERNAL_NAMES:
        rec["kind"] = EXTERNAL_NAMES[int(nu)]
    if payload:
        rec["payload"] = payload
    return json.dumps(rec)


def parse_event_line(line) -> EventLogEntry:
    d = json.loads(line)
    return EventLogEntry(d["seq"], d["time"], d["particle"], d["partner"], d["qualifier"],
                         d.get("payload", {}))


class EventWriter:
    """Streams the simulation's event log to a text file.

    Attach with :meth:`attach`; records are buffered by the log and written in
    batches. :meth:`close` flushes, :meth:`abort` appends the partial marker.
    """

    def __init__(self, path):
        self.path = path
        self.fh = open(path, "w", encoding="utf-8")
        self.fh.write(header(EVENT_FORMAT) + "\n")
        self.lines = 0

    def __call__(self, first, t, i, p, nu):
        out = [event_line(first + k, t[k], i[k], p[k], nu[k]) for k in range(len(t))]
        self.fh.write("\n".join(out) + "\n")
        self.lines += len(out)

    def attach(self, sim):
        sim.log.sinks.append(self)
        return self

    def flush(self):
        self.fh.flush()

    def close(self):
        if not self.fh.closed:
            self.fh.close()

    def abort(self):
        if not self.fh.closed:
            self.fh.write(json.dumps(PARTIAL_MARKER) + "\n")
            self.fh.close()


def read_events(path):
    """EventLogEntry list from an event file; raises on a partial marker."""
    out = []
    with open(path, encoding="utf-8") as fh:
        _check_header(fh.readline(), EVENT_FORMAT)
        for line in fh:
            if not line.strip():
                continue
            if json.loads(line) == PARTIAL_MARKER:
                raise RecordError(f"{path}: run aborted, log is partial")
            out.append(parse_event_line(line))
    return out


def log_lines(sim, start=0):
    """The in-memory log of ``sim`` rendered as event lines (no header)."""
    return [event_line(e.seq, e.time, e.particle, e.partner, e.qualifier)
            for e in sim.log.entries(start)]


# ---------------------------------------------------------------- snapshots
def write_snapshot(sim, path):
    """Synchronisation-free binary snapshot; returns its bytes."""
    blob = sim.snapshot()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)
    return blob


def read_snapshot(path, keep_log=True):
    from ..driver import Simulation
    with open(path, "rb") as fh:
        return Simulation.restore(fh.read(), keep_log=keep_log)


# ------------------------------------------------------------ cell averages
@dataclass
class CellAverages:
    """Window averages for one cell."""

    window: int
    t_start: float
    t_end: float
    cell: tuple
    count: float
    velocity: tuple
    temperature: float
    density: float

    def line(self):
        return json.dumps({"window": self.window, "t_start": self.t_start, "t_end": self.t_end,
                           "cell": list(self.cell), "count": self.count,
                           "velocity": list(self.velocity), "temperature": self.temperature,
                           "density": self.density})

    @classmethod
    def from_line(cls, line):
        d = json.loads(line)
        return cls(d["window"], d["t_start"], d["t_end"], tuple(d["cell"]), d["count"],
                   tuple(d["velocity"]), d["temperature"], d["density"])


class CellAverager:
    """Accumulates per-cell particle counts, momenta and kinetic energies.

    Each :meth:`sample` takes the instantaneous state of every particle of the
    selected species; :meth:`emit` closes a window. Temperature is the mass
    weighted velocity variance about the cell mean, per degree of freedom.
    Only simulated (non-external) cells are reported.
    """

    def __init__(self, sim, species=None):
        self.sim = sim
        g = sim.grid
        self.species = None if species is None else np.atleast_1d(species)
        self.n_cells = int(np.prod(g.n_sim))
        self.volume = float(np.prod(g.csize))
        self.window = 0
        self._reset()

    def _reset(self):
        d = self.sim.dim
        self.samples = 0
        self.n = np.zeros(self.n_cells)
        self.m = np.zeros(self.n_cells)
        self.p = np.zeros((self.n_cells, d))
        self.e = np.zeros(self.n_cells)
        self.t_start = self.sim.t
        self.t_last = self.sim.t

    def _sim_cell(self, wrapped):
        g = self.sim.grid
        k = np.floor(wrapped / g.csize).astype(np.int64)
        ok = ((k >= 0) & (k < g.n_sim)).all(axis=1)
        flat = np.ravel_multi_index(tuple(np.clip(k, 0, g.n_sim - 1).T), tuple(g.n_sim))
        return np.where(ok, flat, -1)

    def sample(self, t=None):
        sim = self.sim
        st = sim.store
        ids = st.alive()
        if self.species is not None:
            ids = ids[np.isin(st.species[ids], self.species)]
        self.samples += 1
        self.t_last = sim.t if t is None else float(t)
        if not len(ids):
            return
        x = sim.wrapped(ids, t)
        c = self._sim_cell(x)
        keep = c >= 0
        ids, c = ids[keep], c[keep]
        m = sim.species.mass[st.species[ids]]
        v = st.vel[ids]
        np.add.at(self.n, c, 1.0)
        np.add.at(self.m, c, m)
        np.add.at(self.p, c, m[:, None] * v)
        np.add.at(self.e, c, m * np.einsum("ij,ij->i", v, v))

    def emit(self):
        """Close the window; returns one CellAverages per simulated cell."""
        g, d = self.sim.grid, self.sim.dim
        out = []
        s = max(self.samples, 1)
        for c in range(self.n_cells):
            n = self.n[c] / s
            if self.m[c] > 0:
                u = self.p[c] / self.m[c]
                # sum m (v - u)^2 = sum m v^2 - M u^2, per degree of freedom per particle
                kt = max(0.0, (self.e[c] - self.m[c] * (u @ u)) / (d * self.n[c])) if self.n[c] > 0 else 0.0
            else:
                u, kt = np.zeros(d), 0.0
            idx = np.unravel_index(c, tuple(g.n_sim))
            out.append(CellAverages(self.window, float(self.t_start), float(self.t_last),
                                    tuple(int(x) for x in idx), float(n),
                                    tuple(float(x) for x in u), float(kt), float(n / self.volume)))
        self.window += 1
        t_last = self.t_last
        self._reset()
        self.t_start = self.t_last = t_last
        return out


def slab_profile(averages, axis, component=0):
    """Count-weighted profile along ``axis``: rows (slab, count, density, velocity, temperature).

    ``component`` picks the velocity component reported in the velocity column.
    """
    idx = np.array([a.cell[axis] for a in averages])
    n = np.array([a.count for a in averages])
    rho = np.array([a.density for a in averages])
    v = np.array([a.velocity[component] for a in averages])
    kt = np.array([a.temperature for a in averages])
    rows = []
    for k in np.unique(idx):
        sel = idx == k
        w = n[sel]
        tot = w.sum()
        rows.append((int(k), float(tot), float(rho[sel].mean()),
                     float((w * v[sel]).sum() / tot) if tot else 0.0,
                     float((w * kt[sel]).sum() / tot) if tot else 0.0))
    return np.array(rows)


def write_table(path, rows, columns):
    """Whitespace-separated column table with a commented header."""
    np.savetxt(path, np.asarray(rows), header=" ".join(columns), fmt="%.17g")


class AveragesWriter:
    def __init__(self, path):
        self.fh = open(path, "w", encoding="utf-8")
        self.fh.write(header(AVERAGES_FORMAT) + "\n")

    def write(self, averages):
        self.fh.write("".join(a.line() + "\n" for a in averages))

    def close(self):
        self.fh.close()


def read_averages(path):
    with open(path, encoding="utf-8") as fh:
        _check_header(fh.readline(), AVERAGES_FORMAT)
        return [CellAverages.from_line(line) for line in fh if line.strip()]
