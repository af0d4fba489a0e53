"""Particle-filter baseline over raw event windows with an adaptive window length.

Particles are circles (x, y, r). A particle's likelihood is the fraction of
its perimeter that lies within half an annulus width of some event pixel of
the current window. The window for the next step is scaled so the expected
in-region event count stays near ``target_events``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from .hough import CircleDetection, Roi


@dataclass(frozen=True)
class ParticleConfig:
    n: int = 500
    sigma_xy: float = 1.5
    sigma_r: float = 0.3
    annulus_px: float = 2.0
    # weights are perimeter_fraction ** likelihood_power
    likelihood_power: float = 1.0
    ess_frac: float = 0.5
    target_events: int = 40
    w_min: int = 100_000  # ns
    w_max: int = 5_000_000
    w_init: int = 1_000_000
    r_range: tuple[float, float] = (3.0, 20.0)


@dataclass(eq=False)
class ParticleSet:
    x: np.ndarray
    y: np.ndarray
    r: np.ndarray
    w: np.ndarray
    rng: np.random.Generator
    window: int

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.w ** 2))


def pf_init(roi: Roi, cfg: ParticleConfig | None = None,
            rng: np.random.Generator | None = None) -> ParticleSet:
    """Particles uniform over the ROI square and the radius range, equal weights."""
    cfg = cfg or ParticleConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    n = cfg.n
    x = rng.uniform(roi.cx - roi.half, roi.cx + roi.half, n)
    y = rng.uniform(roi.cy - roi.half, roi.cy + roi.half, n)
    r = rng.uniform(cfg.r_range[0], cfg.r_range[1], n)
    return ParticleSet(x, y, r, np.full(n, 1.0 / n), rng, int(cfg.w_init))


@numba.njit(cache=True)
def _perimeter_support(px, py, pr, mask, ox, oy):
    h, w = mask.shape
    out = np.empty(px.shape[0])
    for k in range(px.shape[0]):
        m = max(8, int(math.ceil(2.0 * math.pi * pr[k])))
        hit = 0
        for i in range(m):
            a = 2.0 * math.pi * i / m
            u = int(math.floor(px[k] + pr[k] * math.cos(a) + 0.5)) - ox
            v = int(math.floor(py[k] + pr[k] * math.sin(a) + 0.5)) - oy
            if 0 <= u < w and 0 <= v < h and mask[v, u]:
                hit += 1
        out[k] = hit / m
    return out


def _disk(radius: float) -> np.ndarray:
    k = int(math.floor(radius))
    yy, xx = np.mgrid[-k:k + 1, -k:k + 1]
    return xx * xx + yy * yy <= radius * radius + 1e-9


def perimeter_support(px, py, pr, events: np.ndarray, annulus_px: float,
                      width: int | None = None, height: int | None = None) -> np.ndarray:
    """Fraction of each circle's perimeter within ``annulus_px / 2`` of an event pixel."""
    px, py, pr = (np.asarray(a, float) for a in (px, py, pr))
    if len(events) == 0 or px.size == 0:
        return np.zeros(px.size)
    pad = int(math.ceil(annulus_px / 2.0)) + 1
    ox = int(math.floor(np.min(px - pr))) - pad
    oy = int(math.floor(np.min(py - pr))) - pad
    x1 = int(math.ceil(np.max(px + pr))) + pad
    y1 = int(math.ceil(np.max(py + pr))) + pad
    mask = np.zeros((y1 - oy + 1, x1 - ox + 1), dtype=bool)
    ex = events["x"].astype(np.int64) - ox
    ey = events["y"].astype(np.int64) - oy
    ok = (ex >= 0) & (ey >= 0) & (ex < mask.shape[1]) & (ey < mask.shape[0])
    mask[ey[ok], ex[ok]] = True
    if annulus_px / 2.0 >= 1.0:
        mask = ndimage.binary_dilation(mask, structure=_disk(annulus_px / 2.0))
    return _perimeter_support(px, py, pr, mask, ox, oy)


def _systematic_resample(w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(w)
    pos = (rng.random() + np.arange(n)) / n
    cs = np.cumsum(w)
    cs[-1] = 1.0
    return np.searchsorted(cs, pos, side="right")


def _region_count(pf: ParticleSet, events: np.ndarray, margin: float) -> int:
    if len(events) == 0:
        return 0
    x0 = np.min(pf.x - pf.r) - margin
    x1 = np.max(pf.x + pf.r) + margin
    y0 = np.min(pf.y - pf.r) - margin
    y1 = np.max(pf.y + pf.r) + margin
    ex, ey = events["x"], events["y"]
    return int(np.count_nonzero((ex >= x0) & (ex <= x1) & (ey >= y0) & (ey <= y1)))


def pf_step(pf: ParticleSet, events: np.ndarray, cfg: ParticleConfig | None = None,
            t: int | None = None, camera_id: str = "") -> tuple[CircleDetection | None, int, ParticleSet]:
    """One diffuse/weight/resample cycle over the events of the current window.

    Returns ``(estimate or None, next window ns, particle set)``. The particle
    set is updated in place and also returned.
    """
    cfg = cfg or ParticleConfig()
    rng = pf.rng
    n = len(pf.x)
    pf.x = pf.x + rng.normal(0.0, cfg.sigma_xy, n)
    pf.y = pf.y + rng.normal(0.0, cfg.sigma_xy, n)
    pf.r = np.clip(pf.r + rng.normal(0.0, cfg.sigma_r, n), cfg.r_range[0], cfg.r_range[1])

    observed = _region_count(pf, events, cfg.annulus_px)
    if observed == 0:
        nxt = int(cfg.w_max)
    else:
        nxt = int(np.clip(pf.window * cfg.target_events / observed, cfg.w_min, cfg.w_max))

    support = perimeter_support(pf.x, pf.y, pf.r, events, cfg.annulus_px)
    lik = support if cfg.likelihood_power == 1.0 else support ** cfg.likelihood_power
    w = pf.w * lik
    total = float(w.sum())
    pf.window = nxt
    if not total > 0.0:
        # degenerate: keep the cloud, reset weights; the next step diffuses it again
        pf.w = np.full(n, 1.0 / n)
        return None, nxt, pf
    pf.w = w / total
    est = CircleDetection(
        cx=float(pf.w @ pf.x), cy=float(pf.w @ pf.y), r=float(pf.w @ pf.r),
        score=float(np.clip(pf.w @ support, 0.0, 1.0)),
        t=int(events["t"][-1]) if t is None else int(t), camera_id=camera_id,
    )
    if pf.ess < cfg.ess_frac * n:
        idx = _systematic_resample(pf.w, rng)
        pf.x, pf.y, pf.r = pf.x[idx], pf.y[idx], pf.r[idx]
        pf.w = np.full(n, 1.0 / n)
    return est, nxt, pf
