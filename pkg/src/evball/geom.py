"""Pinhole cameras, midpoint stereo triangulation and detection-stream pairing."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

PARALLEL_TOL = 1e-12
DEFAULT_MAX_RESIDUAL_M = 0.03


class GeometryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    tvec: np.ndarray = field(default_factory=lambda: np.zeros(3))
    width: int = 1280
    height: int = 720
    camera_id: str = "cam0"

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float).reshape(3, 3)
        t = np.asarray(self.tvec, dtype=float).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "tvec", t)
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9, rtol=0) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise GeometryError("R must be a proper rotation")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.R.T @ self.tvec

    def to_camera(self, p_world) -> np.ndarray:
        return np.asarray(p_world, dtype=float) @ self.R.T + self.tvec

    def ray(self, u: float, v: float) -> np.ndarray:
        """Unit viewing direction (world frame) through pixel ``(u, v)``."""
        d_cam = np.array([(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0])
        d = self.R.T @ d_cam
        return d / np.linalg.norm(d)

    def in_image(self, u, v):
        return (u >= 0) & (u <= self.width - 1) & (v >= 0) & (v <= self.height - 1)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera ``(R, tvec)`` for a camera at ``eye`` looking at ``target``.

    Camera axes follow the usual image convention: x right, y down, z forward.
    """
    eye = np.asarray(eye, float)
    z = np.asarray(target, float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, float))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.vstack([x, y, z])
    return R, -R @ eye


@dataclass(frozen=True)
class Obs3D:
    p: np.ndarray
    t: int
    residual: float


def project(cam: CameraModel, p_world) -> tuple[float, float]:
    X, Y, Z = cam.to_camera(p_world)
    if Z <= 0:
        raise GeometryError("non-positive depth")
    return cam.fx * X / Z + cam.cx, cam.fy * Y / Z + cam.cy


def project_many(cam: CameraModel, pts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised projection; returns ``(u, v, depth)`` without depth checks."""
    pc = cam.to_camera(np.atleast_2d(pts))
    Z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        return cam.fx * pc[:, 0] / Z + cam.cx, cam.fy * pc[:, 1] / Z + cam.cy, Z


def triangulate(cam_a: CameraModel, uv_a, cam_b: CameraModel, uv_b, t: int = 0) -> Obs3D:
    """Midpoint of the shortest segment between the two back-projected rays."""
    c1, c2 = cam_a.center, cam_b.center
    d1, d2 = cam_a.ray(*uv_a), cam_b.ray(*uv_b)
    w0 = c1 - c2
    b = d1 @ d2
    denom = 1.0 - b * b
    if denom < PARALLEL_TOL:
        raise GeometryError("parallel rays")
    d = d1 @ w0
    e = d2 @ w0
    s = (b * e - d) / denom
    u = (e - b * d) / denom
    if s <= 0 or u <= 0:
        raise GeometryError("behind-camera solution")
    p1 = c1 + s * d1
    p2 = c2 + u * d2
    return Obs3D(0.5 * (p1 + p2), int(t), float(np.linalg.norm(p1 - p2)))


# --------------------------------------------------------------------------
# pairing of asynchronous detection streams


@dataclass(frozen=True)
class PairedObs:
    t: int
    uv_a: tuple[float, float]
    uv_b: tuple[float, float]


def interpolate_track(ts: np.ndarray, values: np.ndarray, t: int, max_gap: int | None):
    """Linearly interpolate ``values`` (rows aligned with sorted ``ts``) at ``t``.

    Exact timestamp hits return the stored row unchanged. Returns None when
    ``t`` is not bracketed or the bracketing gap exceeds ``max_gap``.
    """
    i = int(np.searchsorted(ts, t, side="left"))
    if i < len(ts) and ts[i] == t:
        return values[i]
    if i == 0 or i == len(ts):
        return None
    t0, t1 = int(ts[i - 1]), int(ts[i])
    if max_gap is not None and t1 - t0 > max_gap:
        return None
    a = (t - t0) / (t1 - t0)
    return values[i - 1] + a * (values[i] - values[i - 1])


def pair_streams(dets_a: Sequence, dets_b: Sequence, max_gap: int) -> list[PairedObs]:
    """Pair two timestamp-ordered detection streams.

    The sparser stream keeps its timestamps; the denser one is interpolated
    to them. Pairs whose bracketing detections are more than ``max_gap`` ns
    apart are dropped. Ties in stream length keep stream A's timestamps.
    """
    if not dets_a or not dets_b:
        return []
    a_is_sparse = len(dets_a) <= len(dets_b)
    sparse, dense = (dets_a, dets_b) if a_is_sparse else (dets_b, dets_a)
    ts = np.array([d.t for d in dense], dtype=np.int64)
    uv = np.array([[d.cx, d.cy] for d in dense], dtype=float)
    out = []
    for d in sparse:
        q = interpolate_track(ts, uv, d.t, max_gap)
        if q is None:
            continue
        own = (d.cx, d.cy)
        other = (float(q[0]), float(q[1]))
        out.append(PairedObs(d.t, own, other) if a_is_sparse else PairedObs(d.t, other, own))
    return out


def triangulate_pairs(cam_a: CameraModel, cam_b: CameraModel, pairs: Sequence[PairedObs],
                      max_residual: float = DEFAULT_MAX_RESIDUAL_M) -> list[Obs3D]:
    """Triangulate paired pixels, dropping degenerate pairs and residuals above ``max_residual``."""
    out = []
    for pr in pairs:
        try:
            ob = triangulate(cam_a, pr.uv_a, cam_b, pr.uv_b, pr.t)
        except GeometryError:
            continue
        if ob.residual <= max_residual:
            out.append(ob)
    return out


# --------------------------------------------------------------------------
# files


def load_calibration(path) -> dict[str, CameraModel]:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    cams = {}
    for c in doc["cameras"]:
        dist = c.get("dist", [])
        if any(float(k) != 0.0 for k in dist):
            raise GeometryError(f"camera {c['id']}: non-zero distortion is not supported")
        cams[c["id"]] = CameraModel(
            fx=float(c["fx"]), fy=float(c["fy"]), cx=float(c["cx"]), cy=float(c["cy"]),
            R=np.array(c["R"], float).reshape(3, 3), tvec=np.array(c["t"], float),
            width=int(c["width"]), height=int(c["height"]), camera_id=c["id"],
        )
    return cams


def save_calibration(cams: Sequence[CameraModel], path) -> None:
    doc = {"cameras": [
        {"id": c.camera_id, "width": c.width, "height": c.height,
         "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
         "R": c.R.reshape(-1).tolist(), "t": c.tvec.tolist(), "dist": [0.0] * 5}
        for c in cams]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def write_obs_csv(obs: Sequence[Obs3D], path) -> None:
    lines = ["t_ns,x,y,z,residual"]
    lines += [f"{int(o.t)},{float(o.p[0])!r},{float(o.p[1])!r},{float(o.p[2])!r},{float(o.residual)!r}"
              for o in obs]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_obs_csv(path) -> list[Obs3D]:
    rows = Path(path).read_text(encoding="utf-8").splitlines()
    if not rows or rows[0].strip() != "t_ns,x,y,z,residual":
        raise ValueError(f"{path}: expected header 't_ns,x,y,z,residual'")
    out = []
    for ln, row in enumerate(rows[1:], start=2):
        if not row.strip():
            continue
        f = row.split(",")
        if len(f) != 5:
            raise ValueError(f"{path}: line {ln}: expected 5 fields")
        out.append(Obs3D(np.array([float(f[1]), float(f[2]), float(f[3])]), int(f[0]), float(f[4])))
    return out
