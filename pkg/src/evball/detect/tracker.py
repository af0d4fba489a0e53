"""Initialise-then-track wrapper around the Hough detector.

The first detection searches the whole image; afterwards the search is
restricted to a square ROI centred on the previous detection. After
``miss_limit`` consecutive misses the tracker falls back to a full search.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .hough import CircleDetection, HoughConfig, Roi, hough_detect

INITIALIZING = "initializing"
TRACKING = "tracking"


@dataclass(frozen=True)
class TrackerConfig:
    r_range: tuple[int, int] = (3, 20)
    hough: HoughConfig = field(default_factory=HoughConfig)
    # None -> 3 * r_max
    roi_half: float | None = None
    miss_limit: int = 5

    def __post_init__(self):
        if self.miss_limit < 1:
            raise ValueError("miss_limit must be >= 1")

    @property
    def half(self) -> float:
        return float(self.roi_half) if self.roi_half is not None else 3.0 * self.r_range[1]


@dataclass(frozen=True)
class TrackerState:
    mode: str = INITIALIZING
    roi: Roi | None = None
    miss_count: int = 0

    def __post_init__(self):
        if self.mode not in (INITIALIZING, TRACKING):
            raise ValueError(f"unknown tracker mode {self.mode!r}")
        if self.mode == TRACKING and self.roi is None:
            raise ValueError("tracking state needs an ROI")


def track_step(state: TrackerState, image: np.ndarray, cfg: TrackerConfig | None = None,
               t: int = 0, camera_id: str = "") -> tuple[CircleDetection | None, TrackerState]:
    cfg = cfg or TrackerConfig()
    roi = state.roi if state.mode == TRACKING else None
    det = hough_detect(image, cfg.r_range, roi, cfg.hough, t=t, camera_id=camera_id)
    if det is not None:
        return det, TrackerState(TRACKING, Roi(det.cx, det.cy, cfg.half), 0)
    if state.mode == INITIALIZING:
        return None, state
    misses = state.miss_count + 1
    if misses >= cfg.miss_limit:
        return None, TrackerState()
    return None, replace(state, miss_count=misses)
