"""CSV export/import of circle detections."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable

from .hough import CircleDetection

DETECTIONS_HEADER = "t_ns,camera_id,cx,cy,r,score"


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else repr(float(v))


def write_detections(dets: Iterable[CircleDetection], path) -> None:
    lines = [DETECTIONS_HEADER]
    for d in dets:
        lines.append(f"{d.t},{d.camera_id},{_fmt(d.cx)},{_fmt(d.cy)},{_fmt(d.r)},{_fmt(d.score)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_detections(path) -> list[CircleDetection]:
    rows = Path(path).read_text(encoding="utf-8").splitlines()
    if not rows or rows[0].strip() != DETECTIONS_HEADER:
        raise ValueError(f"{path}: expected header {DETECTIONS_HEADER!r}")
    out = []
    for ln, row in enumerate(rows[1:], start=2):
        if not row.strip():
            continue
        f = row.split(",")
        if len(f) != 6:
            raise ValueError(f"{path}: line {ln}: expected 6 fields")
        try:
            out.append(CircleDetection(float(f[2]), float(f[3]), float(f[4]), float(f[5]),
                                       int(f[0]), f[1]))
        except ValueError as e:
            raise ValueError(f"{path}: line {ln}: {e}") from None
    return out
