"""Gradient-voting circular Hough transform on 8-bit surfaces.

The surface is contrast-stretched (``min(gain * v, 255)``) and differentiated
with a Sobel kernel scaled to grey levels. Edge pixels (magnitude >=
``grad_min``) cast one vote per radius in each direction along their
gradient into a 2D centre accumulator. The peak
of the 3x3 box-filtered accumulator gives the centre (refined by the
centroid of the 3x3 neighbourhood). The radius is then chosen from the
distances of gradient-aligned edge pixels to that centre, and the score is
the fraction of the circle perimeter those pixels cover.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np


@dataclass(frozen=True)
class CircleDetection:
    cx: float
    cy: float
    r: float
    score: float
    t: int = 0
    camera_id: str = ""


@dataclass(frozen=True)
class Roi:
    cx: float
    cy: float
    half: float

    def bounds(self, width: int, height: int) -> tuple[int, int, int, int] | None:
        """Inclusive pixel bounds ``(x0, y0, x1, y1)`` clipped to the image, None if empty."""
        x0 = max(int(math.floor(self.cx - self.half)), 0)
        x1 = min(int(math.ceil(self.cx + self.half)), width - 1)
        y0 = max(int(math.floor(self.cy - self.half)), 0)
        y1 = min(int(math.ceil(self.cy + self.half)), height - 1)
        if x0 > x1 or y0 > y1:
            return None
        return x0, y0, x1, y1

    def contains(self, x, y):
        # float64 so unsigned event coordinates cannot wrap
        return (np.abs(np.asarray(x, dtype=np.float64) - self.cx) <= self.half) & (
            np.abs(np.asarray(y, dtype=np.float64) - self.cy) <= self.half)


@dataclass(frozen=True)
class HoughConfig:
    grad_min: float = 64.0
    min_score: float = 0.33
    # edge pixel counts as support if its gradient is within ~37 deg of radial
    align_cos: float = 0.8
    band: float = 1.5
    r_step: float = 1.0
    # surface values are multiplied by this (and clipped to 255) before the gradient
    gain: int = 4
    # second voting pass restricted to radii near the first estimate
    refine: bool = True


@numba.njit(cache=True, nogil=True)
def _live_rows(img, ya, yb, xa, xb):
    live = np.zeros(img.shape[0], np.bool_)
    for y in range(ya, yb + 1):
        row = img[y, xa:xb + 1]
        acc = np.uint8(0)
        for x in range(row.shape[0]):
            acc |= row[x]
        live[y] = acc != 0
    return live


@numba.njit(cache=True, nogil=True, inline="always")
def _sobel(st, y, x):
    a = np.int32(st[y - 1, x - 1])
    c = np.int32(st[y - 1, x + 1])
    g = np.int32(st[y + 1, x - 1])
    i = np.int32(st[y + 1, x + 1])
    gx = (c - a) + 2 * (np.int32(st[y, x + 1]) - np.int32(st[y, x - 1])) + (i - g)
    gy = (g - a) + 2 * (np.int32(st[y + 1, x]) - np.int32(st[y - 1, x])) + (i - c)
    return gx, gy


@numba.njit(cache=True, nogil=True)
def _edges(img, x0, y0, x1, y1, grad_min, gain):
    h, w = img.shape
    ya = max(y0, 1)
    yb = min(y1, h - 2)
    xa = max(x0, 1)
    xb = min(x1, w - 2)
    # rows with no non-zero pixel in x0-1..x1+1; a 3-row band of zeros has no gradient
    live = _live_rows(img, max(ya - 1, 0), min(yb + 1, h - 1), xa - 1, xb + 1)
    # contrast-stretched copy with a one-pixel margin: EROS values are ordinal,
    # so only "recent enough" matters for edge direction
    sh = yb - ya + 3
    sw = xb - xa + 3
    st = np.zeros((max(sh, 0), max(sw, 0)), np.uint8)
    for y in range(ya - 1, yb + 2):
        if not live[y]:
            continue
        for x in range(xa - 1, xb + 2):
            v = np.int32(img[y, x]) * gain
            st[y - ya + 1, x - xa + 1] = v if v < 255 else 255
    thr = 4.0 * grad_min
    thr2 = np.int32(math.ceil(thr * thr))
    hit = np.zeros((max(sh - 2, 0), max(sw - 2, 0)), np.uint8)
    m = 0
    for y in range(1, sh - 1):
        if not (live[y + ya - 2] or live[y + ya - 1] or live[y + ya]):
            continue
        for x in range(1, sw - 1):
            gx, gy = _sobel(st, y, x)
            if gx * gx + gy * gy >= thr2:
                hit[y - 1, x - 1] = 1
                m += 1
    ex = np.empty(m, np.int32)
    ey = np.empty(m, np.int32)
    ux = np.empty(m, np.float32)
    uy = np.empty(m, np.float32)
    j = 0
    for y in range(1, sh - 1):
        if not (live[y + ya - 2] or live[y + ya - 1] or live[y + ya]):
            continue
        for x in range(1, sw - 1):
            if hit[y - 1, x - 1] == 0:
                continue
            gx, gy = _sobel(st, y, x)
            mag = math.sqrt(np.float64(gx * gx + gy * gy))
            ex[j] = x - 1 + xa
            ey[j] = y - 1 + ya
            ux[j] = gx / mag
            uy[j] = gy / mag
            j += 1
    return ex, ey, ux, uy


@numba.njit(cache=True, nogil=True)
def _vote_peak(ex, ey, ux, uy, x0, y0, aw, ah, r_min, r_max, r_step):
    """Bilinear-splat votes, then the 3x3 box-sum peak over voted cells.

    Returns the accumulator centroid over the 3x3 window at the peak, in
    region coordinates, or (-1, -1) if no vote landed.
    """
    # bilinear splat so the peak is not a plateau of integer-rounded votes
    acc = np.zeros((ah, aw), np.float64)
    nr = int((r_max - r_min) / r_step + 1e-9) + 1
    r_min = float(r_min)
    xmin, ymin, xmax, ymax = aw, ah, -1, -1
    for j in range(ex.shape[0]):
        bx = np.float64(ex[j] - x0)
        by = np.float64(ey[j] - y0)
        dx = np.float64(ux[j])
        dy = np.float64(uy[j])
        for k in range(nr):
            r = r_min + k * r_step
            for sgn in range(2):
                rr = r if sgn == 0 else -r
                fx = bx + rr * dx
                fy = by + rr * dy
                if fx < 0.0 or fy < 0.0:
                    continue
                ix = int(fx)
                iy = int(fy)
                if ix + 1 >= aw or iy + 1 >= ah:
                    continue
                ax = fx - ix
                ay = fy - iy
                acc[iy, ix] += (1.0 - ax) * (1.0 - ay)
                acc[iy, ix + 1] += ax * (1.0 - ay)
                acc[iy + 1, ix] += (1.0 - ax) * ay
                acc[iy + 1, ix + 1] += ax * ay
                if ix < xmin:
                    xmin = ix
                if iy < ymin:
                    ymin = iy
                if ix + 1 > xmax:
                    xmax = ix + 1
                if iy + 1 > ymax:
                    ymax = iy + 1
    if xmax < 0:
        return -1.0, -1.0
    # separable 3x3 box sum over the voted bounding box (clipped at the border)
    ya, yb = max(ymin - 1, 0), min(ymax + 1, ah - 1)
    hs = np.zeros((yb - ya + 1, xmax - xmin + 1), np.float64)
    for y in range(ya, yb + 1):
        for x in range(xmin, xmax + 1):
            v = acc[y, x]
            if x > 0:
                v += acc[y, x - 1]
            if x < aw - 1:
                v += acc[y, x + 1]
            hs[y - ya, x - xmin] = v
    best = 0.0
    bx = -1
    by = -1
    # row-major scan with a strict comparison: ties go to the lowest (y, x)
    for y in range(ymin, ymax + 1):
        for x in range(xmin, xmax + 1):
            if acc[y, x] <= 0.0:
                continue
            sm = hs[y - ya, x - xmin]
            if y - 1 >= ya:
                sm += hs[y - 1 - ya, x - xmin]
            if y + 1 <= yb:
                sm += hs[y + 1 - ya, x - xmin]
            if sm > best:
                best = sm
                bx = x
                by = y
    if bx < 0:
        return -1.0, -1.0
    sw = 0.0
    sx = 0.0
    sy = 0.0
    for yy in range(max(by - 1, 0), min(by + 1, ah - 1) + 1):
        for xx in range(max(bx - 1, 0), min(bx + 1, aw - 1) + 1):
            v = acc[yy, xx]
            sw += v
            sx += v * xx
            sy += v * yy
    return sx / sw, sy / sw


@numba.njit(cache=True, nogil=True)
def _radius(ex, ey, ux, uy, cx, cy, r_min, r_max, align_cos, band):
    n = ex.shape[0]
    rho = np.empty(n, np.float64)
    ok = np.zeros(n, np.bool_)
    for j in range(n):
        dx = ex[j] - cx
        dy = ey[j] - cy
        rr = math.sqrt(dx * dx + dy * dy)
        rho[j] = rr
        if rr > 0.0 and abs(dx * ux[j] + dy * uy[j]) >= align_cos * rr:
            ok[j] = True
    best_r = -1
    best_frac = -1.0
    for r in range(r_min, r_max + 1):
        cnt = 0
        for j in range(n):
            if ok[j] and abs(rho[j] - r) <= band:
                cnt += 1
        frac = cnt / (2.0 * math.pi * r)
        if frac > best_frac:
            best_frac = frac
            best_r = r
    # the normalised bin choice leans small; a few mean-shift steps recentre the band
    r_est = float(best_r)
    cnt = 0
    for _ in range(4):
        cnt = 0
        total = 0.0
        for j in range(n):
            if ok[j] and abs(rho[j] - r_est) <= band:
                cnt += 1
                total += rho[j]
        if cnt == 0:
            return -1.0, 0.0
        r_est = total / cnt
    r_est = min(max(r_est, float(r_min)), float(r_max))
    return r_est, min(1.0, cnt / (2.0 * math.pi * r_est))


def hough_detect(image: np.ndarray, r_range: tuple[int, int], roi: Roi | None = None,
                 cfg: HoughConfig | None = None, t: int = 0,
                 camera_id: str = "") -> CircleDetection | None:
    """Detect the strongest circle with radius in ``r_range`` (pixels).

    With ``roi`` the search (edges and accumulator) is restricted to the ROI
    window. Returns None when no circle reaches ``cfg.min_score``.
    """
    cfg = cfg or HoughConfig()
    r_min, r_max = int(r_range[0]), int(r_range[1])
    if r_min < 2 or r_max < r_min:
        raise ValueError(f"invalid radius range {r_range}")
    h, w = image.shape
    if roi is None:
        x0, y0, x1, y1 = 0, 0, w - 1, h - 1
    else:
        b = roi.bounds(w, h)
        if b is None:
            return None
        x0, y0, x1, y1 = b
    ex, ey, ux, uy = _edges(image, x0, y0, x1, y1, float(cfg.grad_min), int(cfg.gain))
    if ex.shape[0] == 0:
        return None
    px, py = _vote_peak(ex, ey, ux, uy, x0, y0, x1 - x0 + 1, y1 - y0 + 1,
                        r_min, r_max, cfg.r_step)
    if px < 0:
        return None
    cx, cy = px + x0, py + y0
    r, score = _radius(ex, ey, ux, uy, cx, cy, r_min, r_max, cfg.align_cos, cfg.band)
    if r < 0 or score < cfg.min_score:
        return None
    if cfg.refine:
        # votes over all radii leave a broad peak; re-voting only near the found
        # radius sharpens it around the true centre
        lo = max(r - cfg.band, float(r_min))
        hi = min(r + cfg.band, float(r_max))
        qx, qy = _vote_peak(ex, ey, ux, uy, x0, y0, x1 - x0 + 1, y1 - y0 + 1,
                            lo, hi, cfg.r_step)
        if qx >= 0:
            r2, s2 = _radius(ex, ey, ux, uy, qx + x0, qy + y0, r_min, r_max,
                             cfg.align_cos, cfg.band)
            if r2 >= 0 and s2 >= cfg.min_score:
                cx, cy, r, score = qx + x0, qy + y0, r2, s2
    return CircleDetection(float(cx), float(cy), float(r), float(score), int(t), camera_id)


def render_ring(width: int, height: int, cx: float, cy: float, r: float,
                value: int = 255, thickness: float = 1.0) -> np.ndarray:
    """Image with an anti-alias-free ring of the given radius (for tests and demos)."""
    yy, xx = np.mgrid[0:height, 0:width]
    d = np.hypot(xx - cx, yy - cy)
    img = np.zeros((height, width), np.uint8)
    img[np.abs(d - r) <= thickness / 2.0] = value
    return img
