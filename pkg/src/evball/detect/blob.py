"""Blob detector on accumulated event-count frames, used to seed the baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from ..evstream import StreamHeader
from .hough import Roi

@dataclass(frozen=True)
class BlobConfig:
    # a pixel belongs to a blob when it saw at least this many events
    min_count: int = 1
    ar_max: float = 2.5
    min_px: int = 10
    max_px: int = 5000
    # ROI half-width = roi_scale * half the larger bounding-box side + roi_margin
    roi_scale: float = 1.5
    roi_margin: float = 4.0


def event_count_frame(events: np.ndarray, width: int, height: int) -> np.ndarray:
    idx = events["y"].astype(np.int64) * width + events["x"].astype(np.int64)
    return np.bincount(idx, minlength=width * height).reshape(height, width)


def _components(idx: np.ndarray, width: int):
    """8-connected components of the sorted, unique linear pixel indices ``idx``.

    Returns per-pixel labels numbered in raster order of each component's first
    pixel, matching ``ndimage.label`` on the dense mask.
    """
    n = len(idx)
    x = idx % width
    rows, cols = [], []
    # forward neighbours: right, down-left, down, down-right
    for off, dx in ((1, 1), (width - 1, -1), (width, 0), (width + 1, 1)):
        j = np.searchsorted(idx, idx + off)
        j_ok = np.minimum(j, n - 1)
        hit = (j < n) & (idx[j_ok] == idx + off) & (x + dx >= 0) & (x + dx < width)
        rows.append(np.nonzero(hit)[0])
        cols.append(j_ok[hit])
    r, c = np.concatenate(rows), np.concatenate(cols)
    graph = sparse.coo_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(n, n))
    n_comp, lab = csgraph.connected_components(graph, directed=False)
    # idx is sorted, so the first occurrence of a label is its raster-first pixel
    _, first = np.unique(lab, return_index=True)
    order = np.empty(n_comp, dtype=np.int64)
    order[np.argsort(first, kind="stable")] = np.arange(n_comp)
    return order[lab], n_comp


def blob_init(events: np.ndarray, window: int, header: StreamHeader,
              cfg: BlobConfig | None = None) -> Roi | None:
    """ROI around the largest plausible blob among events in the last ``window`` ns."""
    cfg = cfg or BlobConfig()
    if len(events) == 0:
        return None
    t_end = int(events["t"][-1])
    lo = np.searchsorted(events["t"], np.uint64(max(t_end - int(window), 0)), side="left")
    ev = events[lo:]
    w = header.width
    idx, counts = np.unique(ev["y"].astype(np.int64) * w + ev["x"].astype(np.int64),
                            return_counts=True)
    idx = idx[counts >= cfg.min_count]
    if len(idx) == 0:
        return None
    lab, n = _components(idx, w)
    xs, ys = idx % w, idx // w
    sizes = np.bincount(lab, minlength=n)
    x0 = np.full(n, w, dtype=np.int64)
    y0 = np.full(n, header.height, dtype=np.int64)
    x1 = np.full(n, -1, dtype=np.int64)
    y1 = np.full(n, -1, dtype=np.int64)
    np.minimum.at(x0, lab, xs)
    np.minimum.at(y0, lab, ys)
    np.maximum.at(x1, lab, xs)
    np.maximum.at(y1, lab, ys)
    best = None
    for c in np.argsort(-sizes, kind="stable"):
        npx = int(sizes[c])
        if npx < cfg.min_px:
            break
        if npx > cfg.max_px:
            continue
        bh, bw = y1[c] - y0[c] + 1, x1[c] - x0[c] + 1
        ar = bw / bh
        if not (1.0 / cfg.ar_max <= ar <= cfg.ar_max):
            continue
        best = c
        break
    if best is None:
        return None
    sel = lab == best
    half = cfg.roi_scale * 0.5 * max(y1[best] - y0[best] + 1, x1[best] - x0[best] + 1) + cfg.roi_margin
    return Roi(float(xs[sel].mean()), float(ys[sel].mean()), float(half))
