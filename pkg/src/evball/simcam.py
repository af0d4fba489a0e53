"""Synthetic stereo event data with exact ground truth.

The ball is flown with the RK4 flight model, projected into each camera as a
disk of radius ``fx * R / Z``, and events are emitted on the disk boundary
wherever the boundary moves: outward-moving boundary points (leading edge of
a bright ball) give ON events, inward-moving ones OFF events. Uniform
background noise is added on top. This is an edge model, not a photometric
emulator: no latency, refractory period or threshold mismatch.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .evstream import EVENT_DTYPE, StreamHeader, make_events
from .flight.dynamics import BallParams, FlightState, integrate_rk4
from .geom import CameraModel, look_at, project_many


@dataclass
class SimConfig:
    launch: FlightState = field(default_factory=lambda: FlightState(
        p=[-1.2, 0.0, 0.30], v=[3.9, 0.0, 0.9], w=[0.0, 200.0, 0.0]))
    bp: BallParams = field(default_factory=BallParams)
    duration: float = 0.5
    sim_dt: float = 1e-4
    ball_radius_m: float = 0.02
    contrast_event_density: float = 4.0
    noise_rate: float = 1e3
    seed: int = 0
    table_z: float = 0.0
    bright_ball: bool = True

    def __post_init__(self):
        if not self.sim_dt > 0:
            raise ValueError("sim_dt must be positive")
        if self.duration < 0 or self.contrast_event_density < 0 or self.noise_rate < 0:
            raise ValueError("duration, density and noise rate must be non-negative")

    def to_dict(self) -> dict:
        return {
            "launch": {"p": self.launch.p.tolist(), "v": self.launch.v.tolist(),
                       "w": self.launch.w.tolist()},
            "ball": self.bp.to_dict(), "duration": self.duration, "sim_dt": self.sim_dt,
            "ball_radius_m": self.ball_radius_m,
            "contrast_event_density": self.contrast_event_density,
            "noise_rate": self.noise_rate, "seed": self.seed, "table_z": self.table_z,
            "bright_ball": self.bright_ball,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        base = cls()
        launch = base.launch
        if "launch" in d:
            L = d["launch"]
            launch = FlightState(L.get("p", launch.p), L.get("v", launch.v), L.get("w", launch.w))
        bp = BallParams.from_dict(d["ball"]) if "ball" in d else base.bp
        kw = {k: d[k] for k in ("duration", "sim_dt", "ball_radius_m", "contrast_event_density",
                                "noise_rate", "seed", "table_z", "bright_ball") if k in d}
        return cls(launch=launch, bp=bp, **kw)


@dataclass
class SimTrajectory:
    t: np.ndarray  # (n,) int64 ns
    x: np.ndarray  # (n, 9)

    @property
    def states(self) -> list[FlightState]:
        return [FlightState.from_vector(r) for r in self.x]

    def __len__(self):
        return len(self.t)

    def position_at(self, t_ns) -> np.ndarray:
        """Linearly interpolated position(s) at the given time(s)."""
        t_ns = np.asarray(t_ns, dtype=float)
        return np.stack([np.interp(t_ns, self.t, self.x[:, i]) for i in range(3)], axis=-1)


@dataclass
class GtCircles:
    t: np.ndarray
    cx: np.ndarray
    cy: np.ndarray
    r: np.ndarray

    def __len__(self):
        return len(self.t)

    def rows(self):
        return zip(self.t.tolist(), self.cx.tolist(), self.cy.tolist(), self.r.tolist())


@dataclass
class GroundTruth:
    states: SimTrajectory
    cameras: dict[str, GtCircles]

    def to_dict(self) -> dict:
        return {
            "states": [{"t": int(t), "p": x[0:3].tolist(), "v": x[3:6].tolist(),
                        "w": x[6:9].tolist()} for t, x in zip(self.states.t, self.states.x)],
            "cameras": {cid: [{"t": t, "cx": cx, "cy": cy, "r": r} for t, cx, cy, r in g.rows()]
                        for cid, g in self.cameras.items()},
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "GroundTruth":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        st = d["states"]
        traj = SimTrajectory(np.array([s["t"] for s in st], dtype=np.int64),
                             np.array([s["p"] + s["v"] + s["w"] for s in st], float).reshape(-1, 9))
        cams = {}
        for cid, rows in d["cameras"].items():
            cams[cid] = GtCircles(np.array([r["t"] for r in rows], dtype=np.int64),
                                  np.array([r["cx"] for r in rows], float),
                                  np.array([r["cy"] for r in rows], float),
                                  np.array([r["r"] for r in rows], float))
        return cls(traj, cams)


def default_cameras(width: int = 1280, height: int = 720, baseline: float = 3.0,
                    f: float = 1100.0) -> list[CameraModel]:
    """Two cameras on one side of the table, ``baseline`` m apart, looking at its centre."""
    cams = []
    for cid, sx in (("cam_a", -0.5), ("cam_b", 0.5)):
        R, t = look_at([sx * baseline, -2.0, 1.6], [-0.4, 0.0, 0.3])
        cams.append(CameraModel(fx=f, fy=f, cx=(width - 1) / 2, cy=(height - 1) / 2,
                                R=R, tvec=t, width=width, height=height, camera_id=cid))
    return cams


def sim_trajectory(cfg: SimConfig) -> SimTrajectory:
    """RK4 rollout from ``cfg.launch`` until ``cfg.duration`` or the ball reaches the table."""
    n = int(math.floor(cfg.duration / cfg.sim_dt + 1e-9))
    dt_ns = int(round(cfg.sim_dt * 1e9))
    xs = [cfg.launch.to_vector()]
    for _ in range(n):
        nxt = integrate_rk4(xs[-1], cfg.sim_dt, cfg.bp)
        if not np.all(np.isfinite(nxt)):
            raise FloatingPointError("non-finite state in trajectory")
        if nxt[2] <= cfg.table_z:
            break
        xs.append(nxt)
    x = np.array(xs)
    return SimTrajectory(np.arange(len(x), dtype=np.int64) * dt_ns, x)


def project_ground_truth(traj: SimTrajectory, cam: CameraModel, ball_radius_m: float) -> GtCircles:
    """Projected ball circles; samples behind the camera or with the centre off-image are dropped."""
    u, v, Z = project_many(cam, traj.x[:, :3])
    ok = (Z > 0) & np.isfinite(u) & np.isfinite(v)
    ok &= cam.in_image(np.where(ok, u, -1), np.where(ok, v, -1))
    with np.errstate(divide="ignore"):
        r = cam.fx * ball_radius_m / Z
    return GtCircles(traj.t[ok], u[ok], v[ok], r[ok])


def _all_circles(traj, cam, ball_radius_m):
    u, v, Z = project_many(cam, traj.x[:, :3])
    with np.errstate(divide="ignore"):
        r = cam.fx * ball_radius_m / Z
    return u, v, r, Z > 0


def sim_events(traj: SimTrajectory, cam: CameraModel, cfg: SimConfig,
               rng: np.random.Generator | None = None) -> tuple[StreamHeader, np.ndarray, GtCircles]:
    """Events for one camera plus its ground-truth circles."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    header = StreamHeader(cam.width, cam.height, cam.camera_id)
    gt = project_ground_truth(traj, cam, cfg.ball_radius_m)
    parts = []
    if len(traj) >= 2 and cfg.contrast_event_density > 0:
        parts.append(_boundary_events(traj, cam, cfg, rng))
    if cfg.noise_rate > 0 and len(traj) >= 1:
        parts.append(_noise_events(int(traj.t[0]), int(traj.t[-1]), cam, cfg.noise_rate, rng))
    if not parts:
        return header, np.zeros(0, dtype=EVENT_DTYPE), gt
    ev = np.concatenate(parts)
    ev = ev[np.argsort(ev["t"], kind="stable")]
    return header, ev, gt


def _boundary_events(traj, cam, cfg, rng) -> np.ndarray:
    u, v, r, front = _all_circles(traj, cam, cfg.ball_radius_m)
    valid = front[:-1] & front[1:]
    k = np.flatnonzero(valid)
    if k.size == 0:
        return np.zeros(0, dtype=EVENT_DTYPE)
    r_max = float(np.max(r[np.r_[k, k + 1]]))
    m = max(8, int(math.ceil(2 * math.pi * r_max)))
    theta = (np.arange(m) + 0.5) * (2 * math.pi / m)
    nx, ny = np.cos(theta), np.sin(theta)
    du = (u[k + 1] - u[k])[:, None]
    dv = (v[k + 1] - v[k])[:, None]
    dr = (r[k + 1] - r[k])[:, None]
    # boundary displacement along the outward normal at each angle
    disp = du * nx[None, :] + dv * ny[None, :] + dr
    ds = (2 * math.pi * 0.5 * (r[k] + r[k + 1]) / m)[:, None]
    lam = cfg.contrast_event_density * np.abs(disp) * ds
    counts = np.floor(lam).astype(np.int64)
    counts += rng.random(lam.shape) < (lam - counts)
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=EVENT_DTYPE)
    flat = counts.ravel()
    idx = np.repeat(np.arange(flat.size), flat)
    ki = k[idx // m]
    ai = idx % m
    t0 = traj.t[ki].astype(np.int64)
    t1 = traj.t[ki + 1].astype(np.int64)
    ts = t0 + np.floor(rng.random(total) * (t1 - t0)).astype(np.int64)
    a = (ts - t0) / (t1 - t0)
    cu = u[ki] + a * (u[ki + 1] - u[ki])
    cv = v[ki] + a * (v[ki + 1] - v[ki])
    cr = r[ki] + a * (r[ki + 1] - r[ki])
    px = np.floor(cu + cr * nx[ai] + 0.5).astype(np.int64)
    py = np.floor(cv + cr * ny[ai] + 0.5).astype(np.int64)
    sign = np.sign(disp.ravel()[idx]).astype(np.int64)
    pol = sign if cfg.bright_ball else -sign
    inside = (px >= 0) & (px < cam.width) & (py >= 0) & (py < cam.height) & (pol != 0)
    return make_events(ts[inside], px[inside], py[inside], pol[inside])


def _noise_events(t_start: int, t_end: int, cam: CameraModel, rate: float,
                  rng: np.random.Generator) -> np.ndarray:
    dur = max(t_end - t_start, 0) * 1e-9
    n = int(rng.poisson(rate * dur))
    ts = t_start + np.floor(rng.random(n) * max(t_end - t_start, 1)).astype(np.int64)
    xs = rng.integers(0, cam.width, n)
    ys = rng.integers(0, cam.height, n)
    ps = np.where(rng.random(n) < 0.5, -1, 1)
    return make_events(ts, xs, ys, ps)


def simulate(cfg: SimConfig, cams: Sequence[CameraModel] | None = None):
    """Full stereo simulation.

    Returns ``(streams, gt)`` where ``streams`` maps camera id to
    ``(header, events)``. Each camera draws from its own child seed.
    """
    cams = list(cams) if cams is not None else default_cameras()
    traj = sim_trajectory(cfg)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(cams))
    streams, circles = {}, {}
    for cam, ss in zip(cams, seeds):
        header, ev, gt = sim_events(traj, cam, cfg, np.random.default_rng(ss))
        streams[cam.camera_id] = (header, ev)
        circles[cam.camera_id] = gt
    return streams, GroundTruth(traj, circles)


def subsample_rate(obs: Sequence, rate_hz: float) -> list:
    """Keep the first observation in each ``1/rate_hz`` bucket, counted from the first timestamp."""
    if len(obs) == 0:
        return []
    if not rate_hz > 0:
        raise ValueError("rate_hz must be positive")
    t0 = int(obs[0].t)
    out = []
    last_bucket = -1
    for o in obs:
        b = int(((int(o.t) - t0) * rate_hz) // 1e9)
        if b != last_bucket:
            out.append(o)
            last_bucket = b
    return out
