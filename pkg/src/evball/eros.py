"""Exponential reduced ordinal surface (EROS), updated event by event.

Each event multiplies every cell in the ``(2k+1) x (2k+1)`` window around it
by ``d = 0.3 ** (1 / k)`` (floored to 8 bits) and then sets its own cell to
255. Polarity is ignored. The window is clipped at the image border.

The surface is stored row-major as ``values[y, x]`` so a snapshot can be used
directly as a grey image.
"""

from __future__ import annotations

import threading
from pathlib import Path

import numba
import numpy as np

DEFAULT_K_EROS = 10


def decay_factor(k_eros: int) -> float:
    return 0.3 ** (1.0 / k_eros)


def decay_table(d: float) -> np.ndarray:
    """``floor(v * d)`` for every 8-bit value ``v``, evaluated in float64."""
    return np.floor(np.arange(256, dtype=np.float64) * d).astype(np.uint8)


@numba.njit(cache=True, nogil=True)
def first_out_of_bounds(xs, ys, width, height):
    """Index of the first coordinate outside ``width x height``, or -1."""
    for i in range(xs.shape[0]):
        if xs[i] < 0 or ys[i] < 0 or xs[i] >= width or ys[i] >= height:
            return i
    return -1


@numba.njit(cache=True, nogil=True)
def _apply_events(values, lut, k, xs, ys):
    h, w = values.shape
    for i in range(xs.shape[0]):
        vx = np.int64(xs[i])
        vy = np.int64(ys[i])
        y0 = max(vy - k, 0)
        y1 = min(vy + k, h - 1)
        x0 = max(vx - k, 0)
        x1 = min(vx + k, w - 1)
        for y in range(y0, y1 + 1):
            row = values[y]
            for x in range(x0, x1 + 1):
                row[x] = lut[row[x]]
        values[vy, vx] = 255


class ErosSurface:
    """8-bit EROS surface with a lock-protected snapshot.

    One writer calls :meth:`update` / :meth:`update_many`; any other thread may
    call :meth:`snapshot` and receives a copy taken between two batches.
    """

    def __init__(self, width: int, height: int, k_eros: int = DEFAULT_K_EROS):
        if k_eros < 1:
            raise ValueError("k_eros must be >= 1")
        self.width = int(width)
        self.height = int(height)
        self.k_eros = int(k_eros)
        self.d = decay_factor(self.k_eros)
        self._lut = decay_table(self.d)
        self.values = np.zeros((self.height, self.width), dtype=np.uint8)
        self.last_event_t = -1
        self.n_applied = 0
        self._lock = threading.Lock()

    def _check_bounds(self, xs, ys):
        i = first_out_of_bounds(xs, ys, self.width, self.height)
        if i >= 0:
            raise ValueError(f"event {i} at ({xs[i]}, {ys[i]}) outside surface bounds")

    def update(self, x: int, y: int, t: int | None = None) -> None:
        xs = np.array([x], dtype=np.int64)
        ys = np.array([y], dtype=np.int64)
        self._check_bounds(xs, ys)
        with self._lock:
            _apply_events(self.values, self._lut, self.k_eros, xs, ys)
            self.n_applied += 1
            if t is not None:
                self.last_event_t = int(t)

    def update_many(self, events: np.ndarray, max_batch: int = 4096) -> None:
        """Apply a timestamp-ordered event array in order.

        The lock is released between batches of ``max_batch`` events, which
        bounds how long a concurrent snapshot can stall the writer.
        """
        if len(events) == 0:
            return
        xs, ys = events["x"], events["y"]
        self._check_bounds(xs, ys)
        ts = events["t"]
        for s in range(0, len(events), max_batch):
            e = min(s + max_batch, len(events))
            with self._lock:
                _apply_events(self.values, self._lut, self.k_eros, xs[s:e], ys[s:e])
                self.n_applied += e - s
                self.last_event_t = int(ts[e - 1])

    def snapshot(self) -> np.ndarray:
        with self._lock:
            return self.values.copy()

    def snapshot_with_state(self, bounds: tuple[int, int, int, int] | None = None
                            ) -> tuple[np.ndarray, int, int]:
        """Snapshot plus the ``(last_event_t, n_applied)`` it corresponds to.

        ``bounds = (x0, y0, x1, y1)`` (inclusive) copies only that window.
        """
        with self._lock:
            if bounds is None:
                img = self.values.copy()
            else:
                x0, y0, x1, y1 = bounds
                img = self.values[y0:y1 + 1, x0:x1 + 1].copy()
            return img, self.last_event_t, self.n_applied


def eros_update(surface: ErosSurface, event) -> None:
    """Apply one event (anything with ``x``, ``y`` and ``t`` fields)."""
    surface.update(int(event["x"] if isinstance(event, np.void) else event.x),
                   int(event["y"] if isinstance(event, np.void) else event.y),
                   int(event["t"] if isinstance(event, np.void) else event.t))


def eros_snapshot(surface: ErosSurface) -> np.ndarray:
    return surface.snapshot()


def reference_update(values: np.ndarray, k_eros: int, vx: int, vy: int) -> None:
    """Plain double loop over the window, used as a test oracle."""
    d = 0.3 ** (1.0 / k_eros)
    h, w = values.shape
    for x in range(vx - k_eros, vx + k_eros + 1):
        for y in range(vy - k_eros, vy + k_eros + 1):
            if 0 <= x < w and 0 <= y < h:
                values[y, x] = int(np.floor(float(values[y, x]) * d))
    values[vy, vx] = 255


def write_pgm(image: np.ndarray, path) -> None:
    """Write an 8-bit image as binary PGM (P5)."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(Path(path), "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ValueError("only 8-bit binary PGM is supported")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos + 1).reshape(h, w).copy()
