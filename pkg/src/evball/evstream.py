"""Event data model, CSV/binary event files and the burst ("trail") filter.

Events are held as numpy structured arrays with :data:`EVENT_DTYPE`. The
dtype is laid out exactly like a binary record (16 bytes, little-endian),
so binary I/O is a single ``frombuffer``/``tobytes``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numba
import numpy as np

EVENT_DTYPE = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "<i2"), ("_reserved", "<u2")]
)
BIN_MAGIC = b"EVB1"
DEFAULT_DT_BURST_NS = 1_000_000


class EventFormatError(ValueError):
    """Malformed or inconsistent event data."""


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    camera_id: str = "cam0"

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"invalid sensor size {self.width}x{self.height}")


def make_events(t, x, y, p) -> np.ndarray:
    """Build an event array from per-field sequences."""
    t = np.asarray(t)
    ev = np.zeros(t.shape[0], dtype=EVENT_DTYPE)
    ev["t"] = t
    ev["x"] = x
    ev["y"] = y
    ev["p"] = p
    return ev


def from_records(events: Sequence[Event]) -> np.ndarray:
    if len(events) == 0:
        return np.zeros(0, dtype=EVENT_DTYPE)
    x, y, t, p = zip(*events)
    return make_events(t, x, y, p)


def to_records(events: np.ndarray) -> list[Event]:
    return [Event(int(e["x"]), int(e["y"]), int(e["t"]), int(e["p"])) for e in events]


def validate_events(header: StreamHeader, events: np.ndarray) -> None:
    """Raise :class:`EventFormatError` for the first invariant violation."""
    if events.dtype != EVENT_DTYPE:
        raise EventFormatError(f"expected dtype {EVENT_DTYPE}, got {events.dtype}")
    if len(events) == 0:
        return
    bad = np.flatnonzero((events["x"] >= header.width) | (events["y"] >= header.height))
    if bad.size:
        i = bad[0]
        raise EventFormatError(
            f"out-of-bounds coordinate at record {i}: "
            f"({events['x'][i]},{events['y'][i]}) for {header.width}x{header.height}"
        )
    bad = np.flatnonzero((events["p"] != 1) & (events["p"] != -1))
    if bad.size:
        raise EventFormatError(f"invalid polarity {events['p'][bad[0]]} at record {bad[0]}")
    bad = np.flatnonzero(np.diff(events["t"].astype(np.int64)) < 0)
    if bad.size:
        raise EventFormatError(f"timestamp regression at record {bad[0] + 1}")


# --------------------------------------------------------------------------
# file formats


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("csv", "bin"):
            raise ValueError(f"unknown event format {fmt!r}")
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "bin"


def read_events(path, fmt: str | None = None) -> tuple[StreamHeader, np.ndarray]:
    """Read an event file; ``fmt`` is ``"csv"`` or ``"bin"`` (inferred from suffix if None)."""
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "csv":
        header, events = _read_csv(path)
    else:
        header, events = _read_bin(path)
    validate_events(header, events)
    return header, events


def write_events(header: StreamHeader, events: np.ndarray, path, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, fmt)
    events = np.asarray(events)
    validate_events(header, events)
    if fmt == "csv":
        _write_csv(header, events, path)
    else:
        _write_bin(header, events, path)


def _read_csv(path: Path) -> tuple[StreamHeader, np.ndarray]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = f.read().split("\n")
    if not lines or not lines[0]:
        raise EventFormatError(f"{path}: line 1: missing header")
    parts = lines[0].split(",", 2)
    if len(parts) != 3:
        raise EventFormatError(f"{path}: line 1: header must be 'width,height,camera_id'")
    try:
        header = StreamHeader(int(parts[0]), int(parts[1]), parts[2])
    except ValueError as exc:
        raise EventFormatError(f"{path}: line 1: {exc}") from None
    body = lines[1:]
    if body and body[-1] == "":
        body.pop()
    rows = np.zeros((len(body), 4), dtype=np.int64)
    for i, line in enumerate(body):
        fields = line.split(",")
        if len(fields) != 4:
            raise EventFormatError(f"{path}: line {i + 2}: expected 4 fields, got {len(fields)}")
        try:
            rows[i] = [int(v) for v in fields]
        except ValueError:
            raise EventFormatError(f"{path}: line {i + 2}: non-integer field in {line!r}") from None
    t, x, y, p = rows.T
    if (t < 0).any() or (x < 0).any() or (y < 0).any():
        i = int(np.flatnonzero((t < 0) | (x < 0) | (y < 0))[0])
        raise EventFormatError(f"{path}: line {i + 2}: negative field")
    if (x > 0xFFFF).any() or (y > 0xFFFF).any():
        i = int(np.flatnonzero((x > 0xFFFF) | (y > 0xFFFF))[0])
        raise EventFormatError(f"{path}: line {i + 2}: out-of-bounds coordinate")
    if ((p != 1) & (p != -1)).any():
        i = int(np.flatnonzero((p != 1) & (p != -1))[0])
        raise EventFormatError(f"{path}: line {i + 2}: polarity must be -1 or 1")
    return header, make_events(t, x, y, p)


def _write_csv(header: StreamHeader, events: np.ndarray, path: Path) -> None:
    out = [f"{header.width},{header.height},{header.camera_id}"]
    cols = zip(events["t"].tolist(), events["x"].tolist(), events["y"].tolist(), events["p"].tolist())
    out.extend(f"{t},{x},{y},{p}" for t, x, y, p in cols)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(out) + "\n")


_BIN_HEAD = struct.Struct("<4sIIH")


def _read_bin(path: Path) -> tuple[StreamHeader, np.ndarray]:
    data = path.read_bytes()
    if len(data) < _BIN_HEAD.size:
        raise EventFormatError(f"{path}: offset 0: truncated header")
    magic, width, height, id_len = _BIN_HEAD.unpack_from(data, 0)
    if magic != BIN_MAGIC:
        raise EventFormatError(f"{path}: offset 0: bad magic {magic!r}")
    off = _BIN_HEAD.size
    if len(data) < off + id_len:
        raise EventFormatError(f"{path}: offset {off}: truncated camera id")
    try:
        cam = data[off:off + id_len].decode("utf-8")
        header = StreamHeader(width, height, cam)
    except (UnicodeDecodeError, ValueError) as exc:
        raise EventFormatError(f"{path}: offset {off}: {exc}") from None
    off += id_len
    body = len(data) - off
    if body % EVENT_DTYPE.itemsize:
        bad = off + (body // EVENT_DTYPE.itemsize) * EVENT_DTYPE.itemsize
        raise EventFormatError(f"{path}: offset {bad}: truncated record")
    events = np.frombuffer(data, dtype=EVENT_DTYPE, offset=off).copy()
    nz = np.flatnonzero(events["_reserved"] != 0)
    if nz.size:
        raise EventFormatError(
            f"{path}: offset {off + nz[0] * EVENT_DTYPE.itemsize}: reserved field must be 0"
        )
    return header, events


def _write_bin(header: StreamHeader, events: np.ndarray, path: Path) -> None:
    cam = header.camera_id.encode("utf-8")
    head = _BIN_HEAD.pack(BIN_MAGIC, header.width, header.height, len(cam)) + cam
    rec = np.ascontiguousarray(events, dtype=EVENT_DTYPE).copy()
    rec["_reserved"] = 0
    with open(path, "wb") as f:
        f.write(head)
        f.write(rec.tobytes())


# --------------------------------------------------------------------------
# burst filter


@numba.njit(cache=True, nogil=True)
def _first_out_of_bounds(xs, ys, width, height):
    for i in range(xs.shape[0]):
        if xs[i] >= width or ys[i] >= height:
            return i
    return -1


@numba.njit(cache=True, nogil=True)
def _trail_kernel(t, x, y, p, width, last, dt_burst, keep):
    for i in range(t.shape[0]):
        key = (np.int64(y[i]) * width + x[i]) * 2 + (1 if p[i] > 0 else 0)
        prev = last[key]
        ti = np.int64(t[i])
        keep[i] = prev < 0 or ti - prev > dt_burst
        # window restarts from every event, kept or dropped
        last[key] = ti


class TrailFilter:
    """Streaming burst filter; state persists across calls so chunks can be fed in order.

    An event is dropped when the previous event at the same pixel with the
    same polarity (kept or dropped) happened at most ``dt_burst`` ns earlier.
    """

    def __init__(self, width: int, height: int, dt_burst: int = DEFAULT_DT_BURST_NS):
        if dt_burst < 0:
            raise ValueError("dt_burst must be non-negative")
        self.width = int(width)
        self.height = int(height)
        self.dt_burst = int(dt_burst)
        self._last = np.full(self.width * self.height * 2, -1, dtype=np.int64)

    def __call__(self, events: np.ndarray) -> np.ndarray:
        if len(events) == 0:
            return events[:0].copy()
        if _first_out_of_bounds(events["x"], events["y"], self.width, self.height) >= 0:
            raise EventFormatError("out-of-bounds coordinate in trail filter input")
        keep = np.empty(len(events), dtype=np.bool_)
        _trail_kernel(
            events["t"], events["x"], events["y"], events["p"],
            self.width, self._last, self.dt_burst, keep,
        )
        return events[keep]


def trail_filter(events: np.ndarray, dt_burst: int = DEFAULT_DT_BURST_NS,
                 header: StreamHeader | None = None) -> np.ndarray:
    """Remove burst repeats from a timestamp-ordered event array (see :class:`TrailFilter`)."""
    if len(events) == 0:
        return events[:0].copy()
    if header is None:
        width, height = int(events["x"].max()) + 1, int(events["y"].max()) + 1
    else:
        width, height = header.width, header.height
    return TrailFilter(width, height, dt_burst)(events)
