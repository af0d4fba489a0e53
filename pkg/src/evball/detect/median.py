"""Median-of-event-positions baseline detector."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .hough import Roi


@dataclass(frozen=True)
class MedianConfig:
    window: int = 1_000_000  # ns
    min_events: int = 10


class MedianPosition(NamedTuple):
    x: float
    y: float
    t: int


def lower_median(a: np.ndarray) -> float:
    n = len(a)
    k = (n - 1) // 2
    return float(np.partition(a, k)[k])


def median_detect(events: np.ndarray, roi: Roi, cfg: MedianConfig | None = None,
                  t1: int | None = None) -> MedianPosition | None:
    """Per-axis (lower) median of the in-ROI events; stamped with the window end ``t1``.

    ``events`` are the window's events; ``t1`` defaults to the last event time.
    """
    cfg = cfg or MedianConfig()
    if len(events) == 0:
        return None
    inside = roi.contains(events["x"], events["y"])
    n = int(np.count_nonzero(inside))
    if n < max(cfg.min_events, 1):
        return None
    x = events["x"][inside].astype(np.int32)
    y = events["y"][inside].astype(np.int32)
    t = int(events["t"][-1]) if t1 is None else int(t1)
    return MedianPosition(lower_median(x), lower_median(y), t)
