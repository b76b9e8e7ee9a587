"""Event records, the particle-indexed heap, and the external event source.

The heap works on plain arrays so the compiled EDMD kernels can manipulate it
directly:

* ``ev_t, ev_p, ev_nu`` hold each particle's record (time, partner, qualifier),
* ``heap[0:size]`` holds particle ids in binary-heap order,
* ``slot[i]`` is the heap position of particle i or -1 when not queued.

Ordering is by (time, id), so equal times pop the smaller id first.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from numba import njit

# partner sentinels; ordinary partners are particle ids 1..capacity
P_NONE = 0
P_BOUNDARY = 2**62
P_INVALID = -(2**62)


class EventQueueError(RuntimeError):
    """Misuse of the event queue (double insert, cancel of absent id)."""


@dataclass(frozen=True)
class EventRecord:
    time: float
    partner: int
    qualifier: int

    def partner_label(self, owner):
        return partner_label(self.partner, owner)


def partner_label(p, owner=None):
    """Readable form of a partner code."""
    if p == P_BOUNDARY:
        return "inf"
    if p == P_INVALID:
        return "-inf"
    if owner is not None and p == owner:
        return "self"
    return str(int(p))


# ---------------------------------------------------------------- heap kernels

@njit(cache=True, inline="always")
def _less(ev_t, a, b):
    ta = ev_t[a]
    tb = ev_t[b]
    return ta < tb or (ta == tb and a < b)


@njit(cache=True)
def heap_sift_up(ev_t, heap, slot, pos):
    i = heap[pos]
    while pos > 0:
        parent = (pos - 1) >> 1
        q = heap[parent]
        if _less(ev_t, i, q):
            heap[pos] = q
            slot[q] = pos
            pos = parent
        else:
            break
    heap[pos] = i
    slot[i] = pos


@njit(cache=True)
def heap_sift_down(ev_t, heap, slot, size, pos):
    i = heap[pos]
    while True:
        c = 2 * pos + 1
        if c >= size:
            break
        if c + 1 < size and _less(ev_t, heap[c + 1], heap[c]):
            c += 1
        q = heap[c]
        if _less(ev_t, q, i):
            heap[pos] = q
            slot[q] = pos
            pos = c
        else:
            break
    heap[pos] = i
    slot[i] = pos


@njit(cache=True)
def heap_push(ev_t, heap, slot, hsize, i):
    n = hsize[0]
    heap[n] = i
    slot[i] = n
    hsize[0] = n + 1
    heap_sift_up(ev_t, heap, slot, n)


@njit(cache=True)
def heap_remove(ev_t, heap, slot, hsize, i):
    pos = slot[i]
    n = hsize[0] - 1
    hsize[0] = n
    slot[i] = -1
    if pos == n:
        return
    last = heap[n]
    heap[pos] = last
    slot[last] = pos
    if pos > 0 and _less(ev_t, last, heap[(pos - 1) >> 1]):
        heap_sift_up(ev_t, heap, slot, pos)
    else:
        heap_sift_down(ev_t, heap, slot, n, pos)


@njit(cache=True)
def heap_update(ev_t, heap, slot, hsize, i, t):
    """Change the key of queued particle i to t and restore heap order."""
    old = ev_t[i]
    ev_t[i] = t
    pos = slot[i]
    if t < old:
        heap_sift_up(ev_t, heap, slot, pos)
    else:
        heap_sift_down(ev_t, heap, slot, hsize[0], pos)


@njit(cache=True)
def heap_pop(ev_t, heap, slot, hsize):
    i = heap[0]
    heap_remove(ev_t, heap, slot, hsize, i)
    return i


class EventQueue:
    """Indexed binary min-heap of particle event records."""

    def __init__(self, capacity):
        self.capacity = 0
        self.ev_t = np.zeros(1)
        self.ev_p = np.full(1, P_INVALID, dtype=np.int64)
        self.ev_nu = np.zeros(1, dtype=np.int64)
        self.heap = np.zeros(1, dtype=np.int64)
        self.slot = np.full(1, -1, dtype=np.int64)
        self.hsize = np.zeros(1, dtype=np.int64)
        self.grow(capacity)

    def grow(self, capacity):
        if capacity <= self.capacity:
            return
        n = capacity + 1

        def extend(a, fill):
            b = np.full(n, fill, dtype=a.dtype)
            b[: a.shape[0]] = a
            return b

        self.ev_t = extend(self.ev_t, np.inf)
        self.ev_p = extend(self.ev_p, P_INVALID)
        self.ev_nu = extend(self.ev_nu, 0)
        self.heap = extend(self.heap, 0)
        self.slot = extend(self.slot, -1)
        self.capacity = capacity

    def __len__(self):
        return int(self.hsize[0])

    def __contains__(self, i):
        return 0 < i <= self.capacity and self.slot[i] >= 0

    def record(self, i) -> EventRecord:
        return EventRecord(float(self.ev_t[i]), int(self.ev_p[i]), int(self.ev_nu[i]))

    def set_record(self, i, t_e, p, nu):
        """Store a record without queueing (used for time-driven particles)."""
        if i in self:
            raise EventQueueError(f"particle {i} is queued; cancel it first")
        self.ev_t[i] = t_e
        self.ev_p[i] = p
        self.ev_nu[i] = nu

    def schedule(self, i, t_e, p, nu):
        if not 0 < i <= self.capacity:
            raise EventQueueError(f"bad particle id {i}")
        if i in self:
            raise EventQueueError(f"particle {i} already queued")
        if t_e != t_e:
            raise EventQueueError("NaN event time")
        self.ev_t[i] = t_e
        self.ev_p[i] = p
        self.ev_nu[i] = nu
        heap_push(self.ev_t, self.heap, self.slot, self.hsize, i)

    def cancel(self, i) -> EventRecord:
        if i not in self:
            raise EventQueueError(f"particle {i} is not queued")
        heap_remove(self.ev_t, self.heap, self.slot, self.hsize, i)
        rec = self.record(i)
        self.ev_p[i] = P_INVALID
        return rec

    def discard(self, i):
        """Cancel if queued; mark the record invalid either way."""
        if i in self:
            self.cancel(i)
        self.ev_p[i] = P_INVALID

    def invalidate_third_party(self, k, t):
        """Reset k's record to (t, 0, 0), keeping it queued."""
        if k not in self:
            raise EventQueueError(f"particle {k} is not queued")
        self.ev_p[k] = P_NONE
        self.ev_nu[k] = 0
        heap_update(self.ev_t, self.heap, self.slot, self.hsize, k, t)

    def peek(self):
        """(id, record) of the top entry, or None when empty."""
        if self.hsize[0] == 0:
            return None
        i = int(self.heap[0])
        return i, self.record(i)

    def peek_time(self):
        return float(self.ev_t[self.heap[0]]) if self.hsize[0] else np.inf

    def pop(self):
        if self.hsize[0] == 0:
            raise EventQueueError("pop from empty queue")
        i = int(heap_pop(self.ev_t, self.heap, self.slot, self.hsize))
        return i, self.record(i)

    def queued(self):
        return np.sort(self.heap[: self.hsize[0]])

    def check(self):
        """Raise if the heap order or the slot index is inconsistent."""
        n = len(self)
        for pos in range(n):
            i = self.heap[pos]
            if self.slot[i] != pos:
                raise EventQueueError(f"slot of {i} is {self.slot[i]}, expected {pos}")
            if pos > 0:
                q = self.heap[(pos - 1) // 2]
                if (self.ev_t[i], i) < (self.ev_t[q], q):
                    raise EventQueueError(f"heap order broken at position {pos}")
        if np.count_nonzero(self.slot >= 0) != n:
            raise EventQueueError("stale slot entries")

    def state_dict(self):
        return {k: getattr(self, k).copy() for k in
                ("ev_t", "ev_p", "ev_nu", "heap", "slot", "hsize")} | {"capacity": self.capacity}

    @classmethod
    def from_state(cls, d):
        q = cls(1)
        for k in ("ev_t", "ev_p", "ev_nu", "heap", "slot", "hsize"):
            setattr(q, k, d[k].copy())
        q.capacity = d["capacity"]
        return q


# external event kinds
EXT_TIME_STEP = 1
EXT_DSMC = 2
EXT_BIRTH = 3
EXT_REFRESH = 4
EXT_CLUSTER = 5

EXTERNAL_NAMES = {EXT_TIME_STEP: "time_step", EXT_DSMC: "dsmc_collision",
                  EXT_BIRTH: "birth", EXT_REFRESH: "refresh", EXT_CLUSTER: "cluster_hop"}


class ExternalEventSource:
    """Small ordered set of non-particle events, merged with the heap at the top.

    Entries are (time, insertion sequence, kind, key). Equal times come out in
    insertion order.
    """

    def __init__(self):
        self._heap = []
        self._next = 0
        self._dead = set()
        self._last = -np.inf

    def push(self, time, kind, key=0):
        seq = self._next
        self._next += 1
        heapq.heappush(self._heap, (float(time), seq, kind, key))
        return seq

    def _prune(self):
        while self._heap and self._heap[0][1] in self._dead:
            self._dead.discard(heapq.heappop(self._heap)[1])

    def peek_time(self):
        self._prune()
        return self._heap[0][0] if self._heap else np.inf

    def peek(self):
        self._prune()
        return self._heap[0] if self._heap else None

    def pop(self):
        self._prune()
        item = heapq.heappop(self._heap)
        if item[0] < self._last:
            raise EventQueueError("external events out of order")
        self._last = item[0]
        return item

    def cancel(self, seq):
        self._dead.add(seq)

    def cancel_kind(self, kind, key=None):
        for item in self._heap:
            if item[2] == kind and (key is None or item[3] == key):
                self._dead.add(item[1])

    def __len__(self):
        return len(self._heap) - len(self._dead)

    def state_dict(self):
        self._prune()
        live = sorted(x for x in self._heap if x[1] not in self._dead)
        return {"items": live, "next": self._next, "last": self._last}

    @classmethod
    def from_state(cls, d):
        src = cls()
        src._heap = list(d["items"])
        heapq.heapify(src._heap)
        src._next = d["next"]
        src._last = d["last"]
        return src
