import heapq

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aedsim.events import (EXT_BIRTH, EXT_TIME_STEP, P_BOUNDARY, P_INVALID, EventQueue,
                           EventQueueError, ExternalEventSource, partner_label)


def drain(q):
    out = []
    while len(q):
        out.append(q.pop())
    return out


def test_pop_order_small():
    q = EventQueue(4)
    q.schedule(1, 3.0, 0, 0)
    q.schedule(2, 1.0, 0, 0)
    q.schedule(3, 2.0, 0, 0)
    assert [i for i, _ in drain(q)] == [2, 3, 1]


def test_schedule_cancel_peek():
    q = EventQueue(2)
    q.schedule(1, 1.0, 0, 0)
    q.schedule(2, 2.0, 0, 0)
    rec = q.cancel(1)
    assert rec.time == 1.0
    assert 1 not in q
    assert q.peek()[0] == 2 and q.peek()[1].time == 2.0
    assert q.ev_p[1] == P_INVALID


def test_cancel_root_reinsert_larger():
    q = EventQueue(5)
    for i, t in enumerate([0.5, 1.0, 2.0, 3.0, 4.0], 1):
        q.schedule(i, t, 0, 0)
    q.cancel(1)
    q.schedule(1, 10.0, 0, 0)
    assert [i for i, _ in drain(q)] == [2, 3, 4, 5, 1]


def test_sorted_against_sort_oracle():
    rng = np.random.default_rng(1)
    t = rng.random(1000)
    q = EventQueue(1000)
    for i in range(1, 1001):
        q.schedule(i, t[i - 1], 0, 0)
    q.check()
    popped = [rec.time for _, rec in drain(q)]
    assert popped == sorted(t.tolist())


def test_ties_break_by_id():
    q = EventQueue(5)
    for i in (4, 2, 5, 1, 3):
        q.schedule(i, 1.0, 0, 0)
    assert [i for i, _ in drain(q)] == [1, 2, 3, 4, 5]


def test_double_insert_and_bad_cancel_fault():
    q = EventQueue(3)
    q.schedule(1, 1.0, 0, 0)
    with pytest.raises(EventQueueError):
        q.schedule(1, 2.0, 0, 0)
    with pytest.raises(EventQueueError):
        q.cancel(2)
    with pytest.raises(EventQueueError):
        q.schedule(9, 1.0, 0, 0)
    with pytest.raises(EventQueueError):
        q.schedule(2, float("nan"), 0, 0)


def test_invalidate_third_party():
    q = EventQueue(4)
    q.schedule(1, 1.0, 0, 0)
    q.schedule(2, 3.0, 0, 0)
    q.schedule(3, 5.0, 4, 1)
    q.invalidate_third_party(3, 2.0)
    rec = q.record(3)
    assert (rec.time, rec.partner, rec.qualifier) == (2.0, 0, 0)
    q.check()
    assert [i for i, _ in drain(q)] == [1, 3, 2]


def test_invalidate_root_stays_root():
    q = EventQueue(3)
    q.schedule(1, 1.0, 0, 0)
    q.schedule(2, 2.0, 0, 0)
    q.invalidate_third_party(1, 0.5)
    assert q.peek()[0] == 1 and q.peek_time() == 0.5


def test_grow_keeps_contents():
    q = EventQueue(2)
    q.schedule(1, 2.0, 0, 0)
    q.schedule(2, 1.0, 0, 0)
    q.grow(10)
    q.schedule(7, 0.5, 0, 0)
    assert [i for i, _ in drain(q)] == [7, 2, 1]


def test_state_roundtrip():
    q = EventQueue(8)
    for i in range(1, 9):
        q.schedule(i, float(9 - i), i, -1)
    r = EventQueue.from_state(q.state_dict())
    assert drain(r) == drain(q)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["push", "cancel", "pop", "update"]),
                          st.integers(1, 30), st.floats(0, 100, allow_nan=False)),
                max_size=300))
def test_random_ops_match_list_reference(ops):
    q = EventQueue(30)
    ref = {}
    for op, i, t in ops:
        if op == "push" and i not in ref:
            q.schedule(i, t, 0, 0)
            ref[i] = t
        elif op == "cancel" and i in ref:
            q.cancel(i)
            del ref[i]
        elif op == "update" and i in ref:
            q.invalidate_third_party(i, t)
            ref[i] = t
        elif op == "pop" and ref:
            j, rec = q.pop()
            k = min(ref, key=lambda x: (ref[x], x))
            assert (j, rec.time) == (k, ref[k])
            del ref[k]
        assert len(q) == len(ref)
    q.check()
    expected = sorted(ref.items(), key=lambda kv: (kv[1], kv[0]))
    assert [(i, r.time) for i, r in drain(q)] == expected


def test_long_interleave_ten_thousand_ops():
    rng = np.random.default_rng(5)
    q = EventQueue(200)
    ref = []
    live = {}
    for _ in range(10_000):
        i = int(rng.integers(1, 201))
        if i in live and rng.random() < 0.5:
            q.cancel(i)
            del live[i]
        elif i not in live:
            t = float(rng.random())
            q.schedule(i, t, 0, 0)
            live[i] = t
    ref = sorted((t, i) for i, t in live.items())
    assert [(r.time, i) for i, r in drain(q)] == ref


def test_external_source_order_and_cancel():
    src = ExternalEventSource()
    a = src.push(2.0, EXT_TIME_STEP)
    src.push(1.0, EXT_BIRTH)
    src.push(2.0, EXT_BIRTH)
    assert src.peek_time() == 1.0
    src.cancel(a)
    assert [src.pop()[2] for _ in range(len(src))] == [EXT_BIRTH, EXT_BIRTH]
    assert src.peek_time() == np.inf


def test_external_equal_times_insertion_order():
    src = ExternalEventSource()
    for k in range(5):
        src.push(1.0, EXT_TIME_STEP, key=k)
    assert [src.pop()[3] for _ in range(5)] == [0, 1, 2, 3, 4]


def test_external_state_roundtrip():
    src = ExternalEventSource()
    for t in (3.0, 1.0, 2.0):
        src.push(t, EXT_TIME_STEP)
    src.cancel_kind(EXT_TIME_STEP, key=1)
    r = ExternalEventSource.from_state(src.state_dict())
    assert [r.pop()[0] for _ in range(len(r))] == [1.0, 2.0, 3.0]


def test_partner_labels():
    assert partner_label(P_BOUNDARY) == "inf"
    assert partner_label(P_INVALID) == "-inf"
    assert partner_label(3, owner=3) == "self"
    assert partner_label(5, owner=3) == "5"


def test_merged_view_matches_heapq():
    rng = np.random.default_rng(3)
    q = EventQueue(50)
    src = ExternalEventSource()
    ref = []
    for i in range(1, 51):
        t = float(rng.random())
        q.schedule(i, t, 0, 0)
        heapq.heappush(ref, t)
    for _ in range(20):
        t = float(rng.random())
        src.push(t, EXT_TIME_STEP)
        heapq.heappush(ref, t)
    out = []
    while len(q) or len(src):
        if src.peek_time() < q.peek_time():
            out.append(src.pop()[0])
        else:
            out.append(q.pop()[1].time)
    assert out == [heapq.heappop(ref) for _ in range(len(ref))]
