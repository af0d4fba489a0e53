"""Single-producer/single-consumer ring buffer of events.

The producer writes records and then publishes a new total count; the
consumer copies the tail it needs and re-checks the count afterwards to make
sure the copied slots were not overwritten meanwhile (seqlock-style).
"""

from __future__ import annotations

import numpy as np

from ..evstream import EVENT_DTYPE


class RingOverrun(RuntimeError):
    pass


class EventRing:
    def __init__(self, capacity: int = 1 << 16):
        if capacity < 2:
            raise ValueError("capacity must be >= 2")
        self.capacity = int(capacity)
        self._buf = np.zeros(self.capacity, dtype=EVENT_DTYPE)
        # total number of events ever published; only the producer writes it
        self.head = 0

    def push(self, events: np.ndarray) -> None:
        n = len(events)
        if n == 0:
            return
        if n > self.capacity:
            raise RingOverrun("chunk larger than the ring")
        h = self.head
        s = h % self.capacity
        first = min(n, self.capacity - s)
        self._buf[s:s + first] = events[:first]
        if first < n:
            self._buf[:n - first] = events[first:]
        self.head = h + n

    def _copy_tail(self, h: int, m: int) -> np.ndarray:
        start = (h - m) % self.capacity
        if start + m <= self.capacity:
            return self._buf[start:start + m].copy()
        return np.concatenate([self._buf[start:], self._buf[:start + m - self.capacity]])

    def tail(self, m: int, head: int | None = None) -> np.ndarray:
        """Copy of the last ``m`` events published up to ``head`` (default: now)."""
        for _ in range(8):
            h = self.head if head is None else head
            m = min(m, h, self.capacity)
            out = self._copy_tail(h, m)
            # slots [h - m, h) are intact unless the producer wrapped past them
            if self.head - (h - m) <= self.capacity:
                return out
            if head is not None:
                break
        raise RingOverrun("consumer fell behind the producer")

    def since(self, t_from: int, head: int | None = None, inclusive: bool = False) -> np.ndarray:
        """Published events with ``t > t_from`` (``t >= t_from`` if ``inclusive``).

        Only the last ``capacity`` events are retained; older ones are gone.
        """
        h = self.head if head is None else head
        avail = min(h, self.capacity)
        m = min(1024, avail)
        while True:
            ev = self.tail(m, h)
            if m >= avail or int(ev["t"][0]) < t_from:
                break
            m = min(2 * m, avail)
        if t_from < 0:
            return ev
        side = "left" if inclusive else "right"
        return ev[np.searchsorted(ev["t"], np.uint64(t_from), side=side):]
