import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evball.evstream import make_events
from evball.pipeline import EventRing, RingOverrun


def _seq(t0, n):
    t = np.arange(t0, t0 + n, dtype=np.int64)
    return make_events(t * 10, t % 100, (t // 100) % 100, np.ones(n, int))


def test_push_and_tail():
    r = EventRing(16)
    r.push(_seq(0, 5))
    assert r.head == 5
    assert list(r.tail(3)["t"]) == [20, 30, 40]
    assert list(r.tail(10)["t"]) == [0, 10, 20, 30, 40]


def test_wraparound():
    r = EventRing(8)
    for s in range(0, 30, 3):
        r.push(_seq(s, 3))
    assert r.head == 30
    assert list(r.tail(8)["t"]) == [220, 230, 240, 250, 260, 270, 280, 290]


def test_chunk_larger_than_ring():
    with pytest.raises(RingOverrun):
        EventRing(4).push(_seq(0, 5))


def test_empty_push_is_noop():
    r = EventRing(4)
    r.push(_seq(0, 0))
    assert r.head == 0 and len(r.tail(3)) == 0


def test_tail_at_old_head_detects_overwrite():
    r = EventRing(8)
    r.push(_seq(0, 8))
    h = r.head
    r.push(_seq(8, 4))
    with pytest.raises(RingOverrun):
        r.tail(8, h)
    assert list(r.tail(4, h)["t"]) == [40, 50, 60, 70]


def test_since_inclusive_and_exclusive():
    r = EventRing(64)
    r.push(_seq(0, 20))
    assert r.since(100)["t"][0] == 110
    assert r.since(100, inclusive=True)["t"][0] == 100
    assert len(r.since(-1)) == 20


def test_capacity_validation():
    with pytest.raises(ValueError):
        EventRing(1)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 64), st.lists(st.integers(0, 40), max_size=20), st.integers(-5, 700))
def test_since_matches_naive_filter(cap, chunks, t_from):
    r = EventRing(cap)
    pushed = []
    s = 0
    for n in chunks:
        n = min(n, cap)
        ev = _seq(s, n)
        r.push(ev)
        pushed.append(ev)
        s += n
    allev = np.concatenate(pushed) if pushed else _seq(0, 0)
    kept = allev[-cap:] if len(allev) else allev
    got = r.since(t_from)
    expect = kept if t_from < 0 else kept[kept["t"].astype(np.int64) > t_from]
    assert got.tobytes() == expect.tobytes()


def test_concurrent_reader_sees_contiguous_runs():
    r = EventRing(1 << 12)
    total = 200_000
    bad = []
    done = threading.Event()

    def produce():
        for s in range(0, total, 500):
            r.push(_seq(s, 500))
        done.set()

    def consume():
        while not done.is_set():
            try:
                ev = r.tail(1 << 11)
            except RingOverrun:
                continue
            t = ev["t"].astype(np.int64)
            if len(t) and not np.array_equal(np.diff(t), np.full(len(t) - 1, 10)):
                bad.append(t)

    th = [threading.Thread(target=produce), threading.Thread(target=consume)]
    for x in th:
        x.start()
    for x in th:
        x.join()
    assert not bad
    assert r.head == total
