"""Evaluation against simulator ground truth: pixel error, IoU, update rate."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..detect import CircleDetection
from ..geom import interpolate_track


class NoMatchError(ValueError):
    pass


@dataclass
class Matched:
    """Detections interpolated to the bracketed ground-truth samples."""

    t: np.ndarray
    det: np.ndarray  # (n, 3) cx, cy, r
    gt: np.ndarray  # (n, 3)
    n_excluded: int


def match_to_gt(dets: Sequence[CircleDetection], gt) -> Matched:
    """Interpolate detections (centre and radius) to every ground-truth timestamp they bracket.

    ``gt`` is anything with ``t, cx, cy, r`` arrays. Ground-truth samples
    outside the detections' time span are excluded and counted.
    """
    gt_t = np.asarray(gt.t, dtype=np.int64)
    if len(gt_t) == 0:
        raise ValueError("empty ground truth")
    dets = sorted(dets, key=lambda d: d.t)
    ts = np.array([d.t for d in dets], dtype=np.int64)
    vals = np.array([[d.cx, d.cy, d.r] for d in dets], dtype=float).reshape(-1, 3)
    rows, keep = [], []
    for i, t in enumerate(gt_t):
        v = interpolate_track(ts, vals, int(t), None) if len(ts) else None
        if v is None:
            continue
        rows.append(v)
        keep.append(i)
    keep = np.asarray(keep, dtype=np.int64)
    g = np.column_stack([np.asarray(gt.cx, float), np.asarray(gt.cy, float), np.asarray(gt.r, float)])
    return Matched(gt_t[keep], np.asarray(rows, float).reshape(-1, 3), g[keep],
                   len(gt_t) - len(keep))


def _mean_std(v: np.ndarray) -> tuple[float, float | None]:
    if v.size == 0:
        raise NoMatchError("zero matched samples")
    return float(v.mean()), (float(v.std(ddof=1)) if v.size >= 2 else None)


def pixel_errors(m: Matched) -> np.ndarray:
    return np.hypot(m.det[:, 0] - m.gt[:, 0], m.det[:, 1] - m.gt[:, 1])


def eval_pixel_error(dets: Sequence[CircleDetection], gt) -> tuple[float, float | None, int]:
    """Mean and std of the centre error (px) over matched samples, plus the excluded count."""
    m = match_to_gt(dets, gt)
    mean, std = _mean_std(pixel_errors(m))
    return mean, std, m.n_excluded


def circle_iou(c1, c2) -> float:
    """IoU of two disks ``(cx, cy, r)`` from the closed-form lens area."""
    x1, y1, r1 = c1
    x2, y2, r2 = c2
    if r1 <= 0 or r2 <= 0:
        return 0.0
    d = math.hypot(x1 - x2, y1 - y2)
    a1, a2 = math.pi * r1 * r1, math.pi * r2 * r2
    if d >= r1 + r2:
        inter = 0.0
    elif d <= abs(r1 - r2):
        inter = min(a1, a2)
    else:
        c_1 = (d * d + r1 * r1 - r2 * r2) / (2 * d * r1)
        c_2 = (d * d + r2 * r2 - r1 * r1) / (2 * d * r2)
        k = (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2)
        inter = (r1 * r1 * math.acos(max(-1.0, min(1.0, c_1)))
                 + r2 * r2 * math.acos(max(-1.0, min(1.0, c_2)))
                 - 0.5 * math.sqrt(max(k, 0.0)))
    return inter / (a1 + a2 - inter)


def eval_iou(dets: Sequence[CircleDetection], gt) -> tuple[float, float | None, int]:
    """Mean and std IoU of the detected and true disks; detections without a radius are skipped."""
    dets = [d for d in dets if math.isfinite(d.r)]
    m = match_to_gt(dets, gt)
    v = np.array([circle_iou(a, b) for a, b in zip(m.det, m.gt)])
    mean, std = _mean_std(v)
    return mean, std, m.n_excluded


def update_rate(dets: Sequence, duration: float) -> float:
    if not duration > 0:
        raise ValueError("duration must be positive")
    return len(dets) / duration


def gt_duration(gt) -> float:
    t = np.asarray(gt.t, dtype=np.int64)
    return (int(t[-1]) - int(t[0])) * 1e-9 if len(t) >= 2 else 0.0


def rmse_3d(obs: Sequence, position_at) -> float:
    """RMS distance between triangulated points and ``position_at(t_ns)``."""
    if not obs:
        raise NoMatchError("zero matched samples")
    e = np.array([np.linalg.norm(o.p - position_at(o.t)) for o in obs])
    return float(np.sqrt(np.mean(e ** 2)))


@dataclass
class MetricsReport:
    update_rate: float | None = None
    update_rate_std: float | None = None
    pixel_error_mean: float | None = None
    pixel_error_std: float | None = None
    iou_mean: float | None = None
    iou_std: float | None = None
    rmse_3d_m: float | None = None
    n_excluded: int = 0
    per_camera: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(dets_by_cam: dict[str, list[CircleDetection]], gt) -> MetricsReport:
    """Pool per-camera metrics; ``gt`` is a :class:`~evball.simcam.GroundTruth`."""
    errs, ious, rates = [], [], []
    excluded = 0
    per_cam = {}
    for cid, dets in sorted(dets_by_cam.items()):
        g = gt.cameras.get(cid)
        if g is None or len(g.t) == 0:
            continue
        row = {"n_detections": len(dets)}
        dur = gt_duration(g)
        if dur > 0:
            r = update_rate(dets, dur)
            rates.append(r)
            row["update_rate"] = r
        if dets:
            m = match_to_gt(dets, g)
            excluded += m.n_excluded
            e = pixel_errors(m)
            errs.append(e)
            if e.size:
                row["pixel_error_mean"] = float(e.mean())
            fin = [d for d in dets if math.isfinite(d.r)]
            if fin:
                mi = match_to_gt(fin, g)
                iv = np.array([circle_iou(a, b) for a, b in zip(mi.det, mi.gt)])
                ious.append(iv)
                if iv.size:
                    row["iou_mean"] = float(iv.mean())
        per_cam[cid] = row
    rep = MetricsReport(n_excluded=excluded, per_camera=per_cam)
    if rates:
        rep.update_rate = float(np.mean(rates))
        rep.update_rate_std = float(np.std(rates, ddof=1)) if len(rates) >= 2 else None
    e = np.concatenate(errs) if errs else np.zeros(0)
    if e.size:
        rep.pixel_error_mean, rep.pixel_error_std = _mean_std(e)
    v = np.concatenate(ious) if ious else np.zeros(0)
    if v.size:
        rep.iou_mean, rep.iou_std = _mean_std(v)
    return rep
