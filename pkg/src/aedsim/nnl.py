"""Near-neighbour lists built on top of the cell grid.

Each particle of an NNL-enabled species owns a spherical neighbourhood of
radius ``mu * D_i / 2`` centred where the particle stood when the list was
built. The list holds every other NNL particle whose neighbourhood intersects
it, together with the integer lattice offset ``k`` that makes
``(p_i - p_j) + k * L`` the geometric separation. Positions are unwrapped, so
``k`` stays valid for the lifetime of the list.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

NNL_OK = 0
NNL_OVERFLOW = 1


class NNLError(RuntimeError):
    pass


@njit(cache=True)
def exit_time(pos, vel, tim, i, center, rho):
    """Absolute time at which the centroid of i reaches distance rho from center."""
    d = pos.shape[1]
    a = 0.0
    b = 0.0
    c = 0.0
    for ax in range(d):
        dx = pos[i, ax] - center[ax]
        a += vel[i, ax] * vel[i, ax]
        b += dx * vel[i, ax]
        c += dx * dx
    c -= rho * rho
    if a == 0.0:
        return np.inf
    disc = b * b - a * c
    if disc < 0.0:
        disc = 0.0
    if b > 0.0:
        q = -(b + np.sqrt(disc))
        dt = c / q
    else:
        dt = (-b + np.sqrt(disc)) / a
    if dt < 0.0:
        dt = 0.0
    return tim[i] + dt


@njit(cache=True)
def _append(lst, koff, cnt, i, j, k, sign):
    n = cnt[i]
    if n >= lst.shape[1]:
        return False
    lst[i, n] = j
    for ax in range(koff.shape[2]):
        koff[i, n, ax] = sign * k[ax]
    cnt[i] = n + 1
    return True


@njit(cache=True)
def _drop(lst, koff, cnt, i, j):
    n = cnt[i]
    for m in range(n):
        if lst[i, m] == j:
            last = n - 1
            lst[i, m] = lst[i, last]
            for ax in range(koff.shape[2]):
                koff[i, m, ax] = koff[i, last, ax]
            cnt[i] = last
            return


@njit(cache=True)
def nnl_destroy(i, lst, koff, cnt, valid):
    for m in range(cnt[i]):
        _drop(lst, koff, cnt, lst[i, m], i)
    cnt[i] = 0
    valid[i] = False


@njit(cache=True)
def nnl_build(i, t, pos, vel, tim, species, mode, img, cell, head, nxt, nbr, nbr_shift,
              box, nnl_flag, radius, mu, lst, koff, cnt, valid, center, rad):
    """Build the neighbourhood of i at time t; the state of i is not modified.

    Returns NNL_OVERFLOW if some list ran out of room (entries are then
    missing and the caller must enlarge the lists and rebuild).
    """
    d = pos.shape[1]
    for ax in range(d):
        center[i, ax] = pos[i, ax] + vel[i, ax] * (t - tim[i])
    rad[i] = mu * radius[species[i]]
    cnt[i] = 0
    valid[i] = True
    c = cell[i]
    k = np.zeros(d, dtype=np.int64)
    status = NNL_OK
    for q in range(nbr.shape[1]):
        cn = nbr[c, q]
        if cn < 0:
            continue
        j = head[cn]
        while j >= 0:
            if j != i and valid[j] and mode[j] == 1 and nnl_flag[species[j]]:
                r2 = 0.0
                for ax in range(d):
                    k[ax] = img[j, ax] - img[i, ax] - nbr_shift[c, q, ax]
                    dx = (center[i, ax] - center[j, ax]) + k[ax] * box[ax]
                    r2 += dx * dx
                reach = rad[i] + rad[j]
                if r2 < reach * reach:
                    ok1 = _append(lst, koff, cnt, i, j, k, 1)
                    ok2 = _append(lst, koff, cnt, j, i, k, -1)
                    if not (ok1 and ok2):
                        status = NNL_OVERFLOW
            j = nxt[j]
    return status


@dataclass
class NeighborhoodRegion:
    owner: int
    center: np.ndarray
    radius: float
    nnl: list
    periodic_offsets: list


class NeighborLists:
    """Storage for all neighbourhoods (fixed number of entries per particle)."""

    def __init__(self, dim, capacity, mu=1.3, width=32):
        if mu <= 1:
            raise NNLError("mu must exceed 1")
        self.dim = dim
        self.mu = float(mu)
        self.width = width
        self.capacity = 0
        self.lst = np.zeros((1, width), dtype=np.int64)
        self.koff = np.zeros((1, width, dim), dtype=np.int64)
        self.cnt = np.zeros(1, dtype=np.int64)
        self.valid = np.zeros(1, dtype=bool)
        self.center = np.zeros((1, dim))
        self.rad = np.zeros(1)
        self.grow(capacity)

    _FIELDS = ("lst", "koff", "cnt", "valid", "center", "rad")

    def grow(self, capacity, width=None):
        width = width or self.width
        if capacity <= self.capacity and width == self.width:
            return
        capacity = max(capacity, self.capacity)
        n = capacity + 1
        for name in self._FIELDS:
            old = getattr(self, name)
            shape = (n,) + old.shape[1:]
            if name in ("lst", "koff"):
                shape = (n, width) + old.shape[2:]
            new = np.zeros(shape, dtype=old.dtype)
            if name in ("lst", "koff"):
                new[: old.shape[0], : old.shape[1]] = old
            else:
                new[: old.shape[0]] = old
            setattr(self, name, new)
        self.capacity, self.width = capacity, width

    def region(self, i) -> NeighborhoodRegion | None:
        if not self.valid[i]:
            return None
        n = self.cnt[i]
        return NeighborhoodRegion(int(i), self.center[i].copy(), float(self.rad[i]),
                                  [int(x) for x in self.lst[i, :n]],
                                  [tuple(int(v) for v in r) for r in self.koff[i, :n]])

    def neighbors(self, i):
        return sorted(int(x) for x in self.lst[i, : self.cnt[i]])

    def destroy(self, i):
        nnl_destroy(i, self.lst, self.koff, self.cnt, self.valid)

    def check_symmetry(self):
        for i in np.nonzero(self.valid)[0]:
            for m in range(self.cnt[i]):
                j = self.lst[i, m]
                row = list(self.lst[j, : self.cnt[j]])
                if i not in row:
                    raise NNLError(f"{j} in nnl({i}) but not the reverse")
                kj = self.koff[j, row.index(i)]
                if not np.array_equal(kj, -self.koff[i, m]):
                    raise NNLError(f"offsets of {i},{j} are not opposite")

    def state_dict(self):
        return {name: getattr(self, name).copy() for name in self._FIELDS} | {
            "mu": self.mu, "width": self.width, "capacity": self.capacity}

    def load_state(self, d):
        for name in self._FIELDS:
            setattr(self, name, d[name].copy())
        self.mu, self.width, self.capacity = d["mu"], d["width"], d["capacity"]


def protrusion_time(center, rho_inner, r, v, t0=0.0):
    """Ballistic time at which a point leaves the ball |x - center| < rho_inner."""
    pos = np.asarray(r, dtype=float)[None, :]
    vel = np.asarray(v, dtype=float)[None, :]
    return float(exit_time(pos, vel, np.array([t0]), 0, np.asarray(center, dtype=float), rho_inner))


def near_inner_wall(center, rho_inner, r, radius):
    """Diffusive rebuild trigger: core within 1e-3 * radius of the inner wall."""
    dist = float(np.linalg.norm(np.asarray(r, dtype=float) - np.asarray(center, dtype=float)))
    return dist >= rho_inner - 1e-3 * radius
