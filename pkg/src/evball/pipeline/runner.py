"""End-to-end stereo pipeline: ingestion, detection, pairing and triangulation.

Per camera there is one ingestion context (trail filter, then EROS update or
event buffering, strictly in timestamp order) and one detection context.
They share only the EROS surface (lock-protected snapshot) or an SPSC event
ring. Detections flow through an ordered queue to a downstream context that
pairs the two cameras and triangulates.

Two modes:

* realtime: events are replayed at wall-clock pace and detection runs as
  fast as it can on whatever state ingestion has reached;
* deterministic (``cfg.deterministic = N``): detection runs after every N
  ingested events in a single context, so outputs are reproducible.
"""

from __future__ import annotations

import logging
import math
import os
import queue
import sys
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..detect import (INITIALIZING, CircleDetection, Roi, TrackerState, blob_init,
                      median_detect, pf_init, pf_step, track_step)
from ..eros import ErosSurface
from ..evstream import StreamHeader, TrailFilter, read_events
from ..geom import CameraModel, GeometryError, load_calibration, pair_streams, triangulate_pairs
from ..simcam import subsample_rate
from .buffers import EventRing
from .config import PipelineConfig

log = logging.getLogger(__name__)

NO_WORK = object()
# realtime ingestion wakes up this often (s) and applies at most this many events per batch
INGEST_TICK = 1e-4
REALTIME_BATCH = 4096


class Timings:
    """Per-stage wall-clock samples in microseconds (thread-safe appends)."""

    def __init__(self):
        self.samples: dict[str, list[float]] = defaultdict(list)
        self.counters: dict[str, float] = {}

    def add(self, stage: str, seconds: float) -> None:
        self.samples[stage].append(seconds * 1e6)

    def merge(self, other: "Timings", prefix: str = "") -> None:
        for k, v in other.samples.items():
            self.samples[prefix + k].extend(v)
        for k, v in other.counters.items():
            self.counters[prefix + k] = v

    def summary(self, runtimes: bool = True) -> dict:
        out = {}
        for k in sorted(self.samples):
            v = np.asarray(self.samples[k])
            row = {"count": int(v.size)}
            if runtimes and v.size:
                row["mean_us"] = float(v.mean())
                row["std_us"] = float(v.std(ddof=1)) if v.size >= 2 else None
            out[k] = row
        return out


class _Clock:
    def __init__(self, timings: Timings, stage: str):
        self.t, self.stage = timings, stage

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.t.add(self.stage, time.perf_counter() - self.t0)


# --------------------------------------------------------------------------
# per-camera detector stages


class _Stage:
    def __init__(self, header: StreamHeader, cfg: PipelineConfig, timings: Timings):
        self.header = header
        self.cfg = cfg
        self.timings = timings
        self.camera_id = header.camera_id

    def feed(self, events: np.ndarray) -> None:
        raise NotImplementedError

    def detect(self):
        """One detection attempt: a detection, None (tried, nothing found) or NO_WORK."""
        raise NotImplementedError

    @property
    def n_applied(self) -> int:
        raise NotImplementedError


class ErosHoughStage(_Stage):
    def __init__(self, header, cfg, timings):
        super().__init__(header, cfg, timings)
        self.surface = ErosSurface(header.width, header.height, cfg.k_eros)
        self.state = TrackerState()
        self._seen = 0

    def feed(self, events):
        with _Clock(self.timings, "eros_update"):
            self.surface.update_many(events)

    @property
    def n_applied(self):
        return self.surface.n_applied

    def detect(self):
        if self.surface.n_applied == self._seen:
            return NO_WORK
        st = self.state
        tcfg = self.cfg.tracker
        bounds = None
        if st.mode != INITIALIZING:
            b = st.roi.bounds(self.header.width, self.header.height)
            if b is not None:
                # one-pixel margin so the gradient at the ROI border matches the full image
                bounds = (max(b[0] - 1, 0), max(b[1] - 1, 0),
                          min(b[2] + 1, self.header.width - 1), min(b[3] + 1, self.header.height - 1))
        with _Clock(self.timings, "snapshot"):
            img, t, n = self.surface.snapshot_with_state(bounds)
        self._seen = n
        stage = "detect_init" if st.mode == INITIALIZING else "detect_roi"
        t0 = time.perf_counter()
        if bounds is None:
            det, self.state = track_step(st, img, tcfg, t=t, camera_id=self.camera_id)
        else:
            ox, oy = bounds[0], bounds[1]
            local = TrackerState(st.mode, Roi(st.roi.cx - ox, st.roi.cy - oy, st.roi.half), st.miss_count)
            det, nxt = track_step(local, img, tcfg, t=t, camera_id=self.camera_id)
            if det is not None:
                det = CircleDetection(det.cx + ox, det.cy + oy, det.r, det.score, det.t, det.camera_id)
            if nxt.roi is not None:
                nxt = TrackerState(nxt.mode, Roi(nxt.roi.cx + ox, nxt.roi.cy + oy, nxt.roi.half),
                                   nxt.miss_count)
            self.state = nxt
        self.timings.add(stage, time.perf_counter() - t0)
        return det


class _BufferedStage(_Stage):
    def __init__(self, header, cfg, timings, capacity: int = 1 << 17):
        super().__init__(header, cfg, timings)
        self.ring = EventRing(capacity)
        self.roi: Roi | None = None
        self.misses = 0

    def feed(self, events):
        with _Clock(self.timings, "buffer_push"):
            self.ring.push(events)

    @property
    def n_applied(self):
        return self.ring.head

    def _init_roi(self, h: int, t1: int) -> None:
        with _Clock(self.timings, "blob_init"):
            ev = self.ring.since(t1 - self.cfg.blob_window, h)
            self.roi = blob_init(ev, self.cfg.blob_window, self.header, self.cfg.blob)
        self.misses = 0

    def _miss(self) -> None:
        self.misses += 1
        if self.misses >= self.cfg.tracker.miss_limit:
            self.roi = None


class MedianStage(_BufferedStage):
    def __init__(self, header, cfg, timings):
        super().__init__(header, cfg, timings)
        self._seen = 0

    def detect(self):
        h = self.ring.head
        if h == self._seen:
            return NO_WORK
        self._seen = h
        t1 = int(self.ring.tail(1, h)["t"][0])
        if self.roi is None:
            self._init_roi(h, t1)
            return None
        with _Clock(self.timings, "median"):
            ev = self.ring.since(t1 - self.cfg.median.window, h)
            m = median_detect(ev, self.roi, self.cfg.median, t1)
        if m is None:
            self._miss()
            return None
        n_in = int(np.count_nonzero(self.roi.contains(ev["x"], ev["y"])))
        self.roi = Roi(m.x, m.y, self.roi.half)
        self.misses = 0
        # position-only baseline: no radius estimate
        return CircleDetection(m.x, m.y, math.nan, n_in / len(ev), m.t, self.camera_id)


class ParticleStage(_BufferedStage):
    def __init__(self, header, cfg, timings):
        super().__init__(header, cfg, timings)
        self.pf = None
        self.t_last = -1
        self._seen = 0
        self._rng = np.random.default_rng(np.random.SeedSequence(
            [cfg.seed, int.from_bytes(header.camera_id.encode("utf-8")[:8].ljust(8, b"\0"), "little")]))

    def detect(self):
        h = self.ring.head
        if h == 0:
            return NO_WORK
        t_now = int(self.ring.tail(1, h)["t"][0])
        if self.pf is None:
            if h == self._seen:
                return NO_WORK
            self._seen = h
            self._init_roi(h, t_now)
            if self.roi is not None:
                self.pf = pf_init(self.roi, self.cfg.particle, self._rng)
                self.t_last = t_now
            return None
        t_end = self.t_last + self.pf.window
        if t_now < t_end:
            return NO_WORK
        with _Clock(self.timings, "pf_step"):
            ev = self.ring.since(self.t_last, h)
            ev = ev[:np.searchsorted(ev["t"], np.uint64(t_end), side="right")]
            est, _, self.pf = pf_step(self.pf, ev, self.cfg.particle, t=t_end, camera_id=self.camera_id)
        self.t_last = t_end
        if est is None:
            self._miss()
            if self.roi is None:
                self.pf = None
            return None
        self.misses = 0
        return est


_STAGES = {"eros_hough": ErosHoughStage, "median": MedianStage, "particle": ParticleStage}


def make_stage(header: StreamHeader, cfg: PipelineConfig, timings: Timings) -> _Stage:
    return _STAGES[cfg.detector](header, cfg, timings)


# --------------------------------------------------------------------------
# camera drivers


@dataclass
class CameraResult:
    camera_id: str
    detections: list[CircleDetection]
    n_input: int
    n_filtered: int
    n_applied: int
    timings: Timings
    wall_s: float = 0.0


def _drain(stage: _Stage, sink) -> None:
    while True:
        r = stage.detect()
        if r is NO_WORK:
            return
        if r is not None:
            sink(r)


def run_camera_deterministic(header: StreamHeader, events: np.ndarray, cfg: PipelineConfig,
                             sink=None) -> CameraResult:
    timings = Timings()
    stage = make_stage(header, cfg, timings)
    dets: list[CircleDetection] = []

    def emit(d):
        dets.append(d)
        if sink is not None:
            sink(header.camera_id, d)

    w0 = time.perf_counter()
    filt = TrailFilter(header.width, header.height, cfg.dt_burst)
    with _Clock(timings, "trail_filter"):
        kept = filt(events)
    n = cfg.deterministic
    for s in range(0, len(kept), n):
        stage.feed(kept[s:s + n])
        _drain(stage, emit)
    return CameraResult(header.camera_id, dets, len(events), len(kept), stage.n_applied, timings,
                        time.perf_counter() - w0)


def warmup(cfg: PipelineConfig) -> None:
    """Run every kernel of the chosen detector once so JIT/cache loading stays out of timings."""
    from ..detect import render_ring
    from ..evstream import make_events

    w, h = 64, 48
    img = render_ring(w, h, 30.0, 24.0, 8.0)
    ys, xs = np.nonzero(img)
    n = len(xs)
    ev = make_events(np.arange(n, dtype=np.int64) * 1000, xs, ys, np.ones(n, dtype=np.int64))
    header = StreamHeader(w, h, "warmup")
    stage = make_stage(header, cfg.replace(blob=cfg.blob.__class__(min_px=1)), Timings())
    kept = TrailFilter(w, h, cfg.dt_burst)(ev)
    for s in range(0, len(kept), 16):
        stage.feed(kept[s:s + 16])
        _drain(stage, lambda d: None)


def run_camera_realtime(header: StreamHeader, events: np.ndarray, cfg: PipelineConfig,
                        sink=None) -> CameraResult:
    """Replay ``events`` at ``cfg.playback_speed`` and detect as fast as possible."""
    timings = Timings()
    stage = make_stage(header, cfg, timings)
    dets: list[CircleDetection] = []
    done = threading.Event()
    counts = {"filtered": 0}
    errors: list[BaseException] = []

    def ingest():
        try:
            filt = TrailFilter(header.width, header.height, cfg.dt_burst)
            ts = events["t"]
            n = len(events)
            t0 = int(ts[0]) if n else 0
            start = time.perf_counter_ns()
            lo = 0
            while lo < n:
                target = t0 + int((time.perf_counter_ns() - start) * cfg.playback_speed)
                hi = int(np.searchsorted(ts, np.uint64(max(target, 0)), side="right"))
                hi = min(hi, lo + REALTIME_BATCH)
                if hi <= lo:
                    time.sleep(INGEST_TICK)
                    continue
                a = time.perf_counter()
                kept = filt(events[lo:hi])
                timings.add("trail_filter", time.perf_counter() - a)
                stage.feed(kept)
                counts["filtered"] += len(kept)
                lo = hi
                time.sleep(INGEST_TICK)
        except BaseException as e:  # surfaced in the caller
            errors.append(e)
        finally:
            done.set()

    def detect():
        try:
            while True:
                finished = done.is_set()
                r = stage.detect()
                if r is NO_WORK:
                    if finished:
                        return
                    time.sleep(5e-5)
                    continue
                if r is not None:
                    dets.append(r)
                    if sink is not None:
                        sink(header.camera_id, r)
        except BaseException as e:
            errors.append(e)
            done.set()

    w0 = time.perf_counter()
    ti = threading.Thread(target=ingest, name=f"ingest-{header.camera_id}")
    td = threading.Thread(target=detect, name=f"detect-{header.camera_id}")
    ti.start()
    td.start()
    ti.join()
    td.join()
    wall = time.perf_counter() - w0
    if errors:
        raise errors[0]
    timings.counters["ingest_events_per_s"] = len(events) / wall if wall > 0 else 0.0
    return CameraResult(header.camera_id, dets, len(events), counts["filtered"], stage.n_applied,
                        timings, wall)


# --------------------------------------------------------------------------
# full pipeline


@dataclass
class PipelineResult:
    obs: list
    detections: dict[str, list[CircleDetection]]
    cameras: dict[str, CameraResult]
    timings: Timings = field(default_factory=Timings)
    mode: str = "deterministic"

    def timings_dict(self, runtimes: bool = True) -> dict:
        doc = {"mode": self.mode, "stages": self.timings.summary(runtimes), "cameras": {}}
        for cid, cr in self.cameras.items():
            c = {"n_input": cr.n_input, "n_filtered": cr.n_filtered, "n_applied": cr.n_applied,
                 "n_detections": len(cr.detections),
                 "stages": cr.timings.summary(runtimes)}
            if runtimes:
                c["wall_s"] = cr.wall_s
                c.update(cr.timings.counters)
            doc["cameras"][cid] = c
        return doc


def _load_stream(s):
    if isinstance(s, (str, Path)):
        return read_events(s)
    return s


def _resolve_cameras(cams, cfg: PipelineConfig) -> dict[str, CameraModel]:
    if cams is None:
        if cfg.calibration is None:
            raise GeometryError("no calibration given")
        cams = cfg.calibration
    if isinstance(cams, (str, Path)):
        return load_calibration(cams)
    if isinstance(cams, dict):
        return cams
    return {c.camera_id: c for c in cams}


def _check_pair(header: StreamHeader, cams: dict[str, CameraModel]) -> CameraModel:
    cam = cams.get(header.camera_id)
    if cam is None:
        raise GeometryError(f"calibration/stream mismatch: no camera {header.camera_id!r}")
    if (cam.width, cam.height) != (header.width, header.height):
        raise GeometryError(
            f"calibration/stream mismatch for {header.camera_id!r}: "
            f"{cam.width}x{cam.height} vs {header.width}x{header.height}")
    return cam


def run_pipeline(stream_a, stream_b, cams=None, cfg: PipelineConfig | None = None) -> PipelineResult:
    """Run both cameras, then pair and triangulate downstream.

    ``stream_a``/``stream_b`` are event-file paths or ``(header, events)``;
    ``cams`` is a calibration path, a list or a dict of :class:`CameraModel`
    (defaults to ``cfg.calibration``).
    """
    cfg = cfg or PipelineConfig()
    cams = _resolve_cameras(cams, cfg)
    (ha, ea), (hb, eb) = _load_stream(stream_a), _load_stream(stream_b)
    if ha.camera_id == hb.camera_id:
        raise GeometryError("both streams carry the same camera id")
    cam_a, cam_b = _check_pair(ha, cams), _check_pair(hb, cams)

    downstream = Timings()
    q: queue.Queue = queue.Queue()
    collected: dict[str, list[CircleDetection]] = {ha.camera_id: [], hb.camera_id: []}
    result_box: dict = {}

    def consume():
        ended = 0
        while ended < 2:
            item = q.get()
            if item is None:
                ended += 1
                continue
            cid, det = item
            collected[cid].append(det)
        # live pairing uses the evaluation-time rule once both streams have ended
        a = time.perf_counter()
        da = sorted(collected[ha.camera_id], key=lambda d: d.t)
        db = sorted(collected[hb.camera_id], key=lambda d: d.t)
        pairs = pair_streams(da, db, cfg.max_gap)
        obs = triangulate_pairs(cam_a, cam_b, pairs, cfg.max_residual)
        if cfg.rate_hz > 0:
            obs = subsample_rate(obs, cfg.rate_hz)
        downstream.add("triangulate", time.perf_counter() - a)
        result_box["obs"] = obs

    def sink(cid, det):
        q.put((cid, det))

    tc = threading.Thread(target=consume, name="downstream")
    tc.start()
    results: dict[str, CameraResult] = {}
    try:
        if cfg.deterministic > 0:
            mode = "deterministic"
            for h, e in ((ha, ea), (hb, eb)):
                results[h.camera_id] = run_camera_deterministic(h, e, cfg, sink)
                q.put(None)
        else:
            mode = "realtime"
            par = cfg.parallel_cameras
            if par is None:
                par = (os.cpu_count() or 1) >= 4
            warmup(cfg)
            old = sys.getswitchinterval()
            sys.setswitchinterval(1e-4)
            try:
                if par:
                    errs = []

                    def one(h, e):
                        try:
                            results[h.camera_id] = run_camera_realtime(h, e, cfg, sink)
                        except BaseException as ex:
                            errs.append(ex)
                        finally:
                            q.put(None)

                    ths = [threading.Thread(target=one, args=he) for he in ((ha, ea), (hb, eb))]
                    for t in ths:
                        t.start()
                    for t in ths:
                        t.join()
                    if errs:
                        raise errs[0]
                else:
                    for h, e in ((ha, ea), (hb, eb)):
                        try:
                            results[h.camera_id] = run_camera_realtime(h, e, cfg, sink)
                        finally:
                            q.put(None)
            finally:
                sys.setswitchinterval(old)
    except BaseException:
        while tc.is_alive():
            q.put(None)
            tc.join(0.05)
        raise
    tc.join()

    timings = Timings()
    for cid, cr in results.items():
        timings.merge(cr.timings)
    timings.merge(downstream)
    dets = {cid: results[cid].detections for cid in (ha.camera_id, hb.camera_id)}
    return PipelineResult(result_box.get("obs", []), dets, results, timings, mode)
