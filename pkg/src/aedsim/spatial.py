"""Linked-list cells, cell bitmasks and the interior/boundary/external split.

The simulated region is the box ``[0, L_a)`` along every axis. Axes whose faces
are open get extra ghost cells outside the box (``w_BE`` ghost layers plus one
purely external layer that catches anything overshooting). Cells are indexed
row-major over the full padded grid.

Cell membership uses intrusive doubly linked lists (``head``, ``nxt``, ``prv``)
and a per-cell per-species ``count`` table. Each cell also has one 64-bit mask
word: bits 0..60 flag species presence, bit 61 marks event-driven cells, bit 62
boundary cells and bit 63 external cells.
"""
from __future__ import annotations

import itertools

import numpy as np
from numba import njit
from scipy import ndimage

PERIODIC, WALL, THERMAL, OPEN = 0, 1, 2, 3
KIND_CODES = {"periodic": PERIODIC, "wall": WALL, "hard-wall": WALL,
              "thermal": THERMAL, "open": OPEN}
KIND_NAMES = {PERIODIC: "periodic", WALL: "wall", THERMAL: "thermal", OPEN: "open"}

BIT_ED = np.uint64(1) << np.uint64(61)
BIT_B = np.uint64(1) << np.uint64(62)
BIT_E = np.uint64(1) << np.uint64(63)
SPECIES_BITS = (np.uint64(1) << np.uint64(61)) - np.uint64(1)


class SpatialError(RuntimeError):
    pass


# ------------------------------------------------------------ compiled helpers

@njit(cache=True)
def locate_flat(w, origin, csize, dims):
    """Flat index of the cell containing wrapped position w (clamped)."""
    idx = 0
    for a in range(w.shape[0]):
        c = int(np.floor((w[a] - origin[a]) / csize[a]))
        if c < 0:
            c = 0
        elif c >= dims[a]:
            c = dims[a] - 1
        idx = idx * dims[a] + c
    return idx


@njit(cache=True)
def cell_insert(i, c, s, head, nxt, prv, count, mask, cell):
    h = head[c]
    nxt[i] = h
    prv[i] = -1
    if h >= 0:
        prv[h] = i
    head[c] = i
    count[c, s] += 1
    mask[c] |= np.uint64(1) << np.uint64(s)
    cell[i] = c


@njit(cache=True)
def cell_remove(i, s, head, nxt, prv, count, cell):
    c = cell[i]
    a = prv[i]
    b = nxt[i]
    if a >= 0:
        nxt[a] = b
    else:
        head[c] = b
    if b >= 0:
        prv[b] = a
    nxt[i] = -1
    prv[i] = -1
    count[c, s] -= 1
    cell[i] = -1


@njit(cache=True)
def cell_move(i, new, s, head, nxt, prv, count, mask, cell):
    cell_remove(i, s, head, nxt, prv, count, cell)
    cell_insert(i, new, s, head, nxt, prv, count, mask, cell)


@njit(cache=True)
def relocate_many(ids, newcells, species, head, nxt, prv, count, mask, cell):
    for k in range(ids.shape[0]):
        i = ids[k]
        if cell[i] != newcells[k]:
            cell_move(i, newcells[k], species[i], head, nxt, prv, count, mask, cell)


class CellGrid:
    """Uniform cell grid over the (possibly padded) simulation box."""

    def __init__(self, box, boundaries, n_species, capacity, min_cell_size=None,
                 ncells=None, w_bi=1, w_be=1):
        box = np.asarray(box, dtype=float)
        d = box.shape[0]
        if d not in (2, 3):
            raise SpatialError("dimension must be 2 or 3")
        self.dim = d
        self.box = box
        self.n_species = n_species
        kinds = np.zeros((d, 2), dtype=np.int64)
        for a, b in enumerate(boundaries):
            if isinstance(b, str):
                b = (b, b)
            lo, hi = (KIND_CODES[x] if isinstance(x, str) else int(x) for x in b)
            if (lo == PERIODIC) != (hi == PERIODIC):
                raise SpatialError(f"axis {a}: periodic must apply to both faces")
            kinds[a] = (lo, hi)
        self.kinds = kinds
        self.periodic = kinds[:, 0] == PERIODIC
        if ncells is None:
            if min_cell_size is None or min_cell_size <= 0:
                raise SpatialError("need ncells or a positive min_cell_size")
            ncells = np.maximum(1, np.floor(box / min_cell_size * (1 + 1e-12)).astype(np.int64))
        ncells = np.broadcast_to(np.asarray(ncells, dtype=np.int64), (d,)).copy()
        if (ncells < 1).any():
            raise SpatialError("need at least one cell per axis")
        self.n_sim = ncells
        self.csize = box / ncells
        if min_cell_size is not None and (self.csize < min_cell_size * (1 - 1e-12)).any():
            raise SpatialError(f"cell size {self.csize} below required {min_cell_size}")
        if w_bi < 1:
            raise SpatialError("w_B^I must be at least 1")
        if w_be < 1:
            raise SpatialError("w_B^E must be at least 1")
        self.w_bi, self.w_be = int(w_bi), int(w_be)
        pad = np.where(kinds == OPEN, self.w_be + 1, 0)
        self.pad = pad
        self.dims = ncells + pad[:, 0] + pad[:, 1]
        self.origin = -pad[:, 0] * self.csize
        self.sim_lo = pad[:, 0].copy()
        self.sim_hi = pad[:, 0] + ncells
        self.n_cells = int(np.prod(self.dims))
        if self.n_cells > 50_000_000:
            raise SpatialError("cell grid too large")
        self.head = np.full(self.n_cells, -1, dtype=np.int64)
        self.count = np.zeros((self.n_cells, n_species), dtype=np.int64)
        self.mask = np.zeros(self.n_cells, dtype=np.uint64)
        self.nxt = np.full(1, -1, dtype=np.int64)
        self.prv = np.full(1, -1, dtype=np.int64)
        self.capacity = 0
        self.grow(capacity)
        self.in_event = False
        self._build_neighbors()
        self.coords = np.array(np.unravel_index(np.arange(self.n_cells), tuple(self.dims))).T
        self.partition_domain()

    # -- geometry
    def grow(self, capacity):
        if capacity <= self.capacity:
            return
        for name in ("nxt", "prv"):
            old = getattr(self, name)
            new = np.full(capacity + 1, -1, dtype=np.int64)
            new[: old.shape[0]] = old
            setattr(self, name, new)
        self.capacity = capacity

    def _build_neighbors(self):
        d, dims = self.dim, self.dims
        offsets = np.array(list(itertools.product((-1, 0, 1), repeat=d)), dtype=np.int64)
        n_off = offsets.shape[0]
        nbr = np.full((self.n_cells, n_off), -1, dtype=np.int64)
        shift = np.zeros((self.n_cells, n_off, d), dtype=np.int64)
        coords = np.array(np.unravel_index(np.arange(self.n_cells), tuple(dims))).T
        for k, o in enumerate(offsets):
            q = coords + o
            s = np.zeros_like(q)
            ok = np.ones(self.n_cells, dtype=bool)
            for a in range(d):
                if self.periodic[a]:
                    s[:, a] = np.floor_divide(q[:, a], dims[a])
                    q[:, a] -= s[:, a] * dims[a]
                else:
                    ok &= (q[:, a] >= 0) & (q[:, a] < dims[a])
            flat = np.where(ok, np.ravel_multi_index(tuple(np.clip(q, 0, dims - 1).T), tuple(dims)), -1)
            nbr[:, k] = flat
            shift[:, k] = s
        # duplicates appear when a periodic axis has fewer than three cells
        small = bool((self.periodic & (dims < 3)).any())
        for c in range(self.n_cells if small else 0):
            seen = set()
            for k in range(n_off):
                f = nbr[c, k]
                if f < 0:
                    continue
                if f in seen:
                    nbr[c, k] = -1
                seen.add(f)
        self.nbr = nbr
        self.nbr_shift = shift
        self.offsets = offsets

    def wrap(self, pos, img=None):
        """Wrapped positions and image counters for unwrapped positions."""
        pos = np.asarray(pos, dtype=float)
        w = pos.copy()
        im = np.zeros(pos.shape, dtype=np.int64) if img is None else np.array(img, dtype=np.int64)
        if img is not None:
            w -= im * self.box
        per = self.periodic
        k = np.floor(w[..., per] / self.box[per]).astype(np.int64)
        im[..., per] += k
        w[..., per] -= k * self.box[per]
        return w, im

    def locate_cell(self, position):
        position = np.asarray(position, dtype=float)
        if not np.all(np.isfinite(position)):
            raise SpatialError(f"non-finite position {position}")
        return int(locate_flat(position, self.origin, self.csize, self.dims))

    def locate_many(self, w):
        c = np.floor((w - self.origin) / self.csize).astype(np.int64)
        c = np.clip(c, 0, self.dims - 1)
        return np.ravel_multi_index(tuple(c.T), tuple(self.dims))

    def cell_coords(self, c):
        return tuple(int(x) for x in np.unravel_index(c, tuple(self.dims)))

    def cell_bounds(self, c):
        lo = self.origin + np.array(self.cell_coords(c)) * self.csize
        return lo, lo + self.csize

    def cell_volume(self):
        return float(np.prod(self.csize))

    def neighbor_cells(self, c):
        row = self.nbr[c]
        return [int(x) for x in row[row >= 0]]

    # -- lists
    def insert(self, i, c, s, cell):
        if self.mask[c] & BIT_E and not self.mask[c] & BIT_B:
            raise SpatialError(f"cell {c} is purely external")
        cell_insert(i, c, s, self.head, self.nxt, self.prv, self.count, self.mask, cell)

    def remove(self, i, s, cell):
        cell_remove(i, s, self.head, self.nxt, self.prv, self.count, cell)

    def transfer_particle(self, i, new_cell, s, cell):
        if self.mask[new_cell] & BIT_E and not self.mask[new_cell] & BIT_B:
            raise SpatialError(f"particle {i} may not enter purely external cell {new_cell}")
        cell_move(i, new_cell, s, self.head, self.nxt, self.prv, self.count, self.mask, cell)

    def members(self, c):
        out = []
        i = self.head[c]
        while i >= 0:
            out.append(int(i))
            i = self.nxt[i]
        return out

    def occupancy(self):
        return self.count.sum(axis=1)

    # -- masks
    def mask_skip(self, c, interaction_bits):
        """True when nothing in cell c can interact with the querying species."""
        return not (self.mask[c] & interaction_bits & SPECIES_BITS)

    def flags(self, bit):
        return (self.mask & bit) != 0

    def partition_domain(self, simulated=None, w_bi=None, w_be=None):
        """Recompute the boundary and external bits from cell coordinates."""
        if w_bi is not None:
            if w_bi < 1:
                raise SpatialError("w_B^I must be at least 1")
            self.w_bi = int(w_bi)
        if w_be is not None:
            self.w_be = int(w_be)
        shape = tuple(self.dims)
        if simulated is None:
            coords = np.indices(shape)
            simulated = np.ones(shape, dtype=bool)
            for a in range(self.dim):
                simulated &= (coords[a] >= self.sim_lo[a]) & (coords[a] < self.sim_hi[a])
        simulated = np.asarray(simulated, dtype=bool).reshape(shape)
        self.simulated = simulated.ravel()
        boundary = np.zeros(shape, dtype=bool)
        ghost = np.zeros(shape, dtype=bool)
        if not simulated.all() and simulated.any():
            w = max(self.w_bi, self.w_be)
            padded = simulated
            for a in range(self.dim):
                widths = [(0, 0)] * self.dim
                widths[a] = (w, w)
                padded = np.pad(padded, widths, mode="wrap" if self.periodic[a] else "edge")
            crop = tuple(slice(w, w + n) for n in shape)
            din = ndimage.distance_transform_cdt(padded, metric="chessboard")[crop]
            dout = ndimage.distance_transform_cdt(~padded, metric="chessboard")[crop]
            boundary = simulated & (din <= self.w_bi)
            ghost = ~simulated & (dout <= self.w_be)
        keep = self.mask & (SPECIES_BITS | BIT_ED)
        keep[boundary.ravel() | ghost.ravel()] |= BIT_B
        keep[~simulated.ravel()] |= BIT_E
        self.mask = keep

    def refresh_species_bits(self):
        bits = np.zeros(self.n_cells, dtype=np.uint64)
        present = self.count > 0
        for s in range(self.n_species):
            bits[present[:, s]] |= np.uint64(1) << np.uint64(s)
        self.mask = (self.mask & ~SPECIES_BITS) | bits

    def set_event_driven(self, ed):
        ed = np.asarray(ed, dtype=bool)
        self.mask = np.where(ed, self.mask | BIT_ED, self.mask & ~BIT_ED)

    def mask_refresh(self, event_driven=None):
        """Exact species bits, plus a new event-driven flag set if given."""
        if self.in_event:
            raise SpatialError("mask_refresh is only allowed between events")
        self.refresh_species_bits()
        if event_driven is not None:
            self.set_event_driven(event_driven)

    def check(self, pos_wrapped, cell, ids, species):
        """Raise if stored lists disagree with a rebuild from positions."""
        found = np.zeros(self.n_cells, dtype=np.int64)
        seen = set()
        for c in range(self.n_cells):
            i = self.head[c]
            prev = -1
            while i >= 0:
                if cell[i] != c or self.prv[i] != prev:
                    raise SpatialError(f"list corruption at particle {i} in cell {c}")
                if i in seen:
                    raise SpatialError(f"particle {i} listed twice")
                seen.add(i)
                found[c] += 1
                prev = i
                i = self.nxt[i]
        if set(int(x) for x in ids) != seen:
            raise SpatialError("listed particles differ from live particles")
        if not np.array_equal(found, self.count.sum(axis=1)):
            raise SpatialError("cell counts disagree with lists")
        expect = np.zeros_like(self.count)
        np.add.at(expect, (cell[ids], species[ids]), 1)
        if not np.array_equal(expect, self.count):
            raise SpatialError("per-species counts disagree with lists")
        if len(ids):
            # positions sitting on a face (just after a transfer) may round
            # either way, hence the small tolerance
            tol = 1e-9 * self.csize
            lo = self.origin + self.coords[cell[ids]] * self.csize
            off = np.asarray(pos_wrapped) - lo
            per = self.periodic
            off[:, per] = np.mod(off[:, per] + tol[per], self.box[per]) - tol[per]
            bad = np.nonzero(((off < -tol) | (off > self.csize + tol)).any(axis=1))[0]
            if bad.size:
                raise SpatialError(f"particle {ids[bad[0]]} is not in the cell its position implies")

    def state_dict(self):
        return {k: getattr(self, k).copy() for k in ("head", "nxt", "prv", "count", "mask")}

    def load_state(self, d):
        for k, v in d.items():
            setattr(self, k, v.copy())
        self.capacity = self.nxt.shape[0] - 1
