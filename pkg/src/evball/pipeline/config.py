"""Pipeline configuration (JSON round-trippable)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..detect import BlobConfig, HoughConfig, MedianConfig, ParticleConfig, TrackerConfig
from ..eros import DEFAULT_K_EROS
from ..evstream import DEFAULT_DT_BURST_NS
from ..geom import DEFAULT_MAX_RESIDUAL_M

DETECTORS = ("eros_hough", "median", "particle")


@dataclass(frozen=True)
class PipelineConfig:
    detector: str = "eros_hough"
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    median: MedianConfig = field(default_factory=MedianConfig)
    particle: ParticleConfig = field(default_factory=ParticleConfig)
    blob: BlobConfig = field(default_factory=BlobConfig)
    # window (ns) of events accumulated for blob initialisation of the baselines
    blob_window: int = 1_000_000
    k_eros: int = DEFAULT_K_EROS
    dt_burst: int = DEFAULT_DT_BURST_NS
    calibration: str | None = None
    # 0 disables frame-rate emulation of the 3D output
    rate_hz: float = 0.0
    # 0 = realtime; N > 0 = detect after every N ingested (filtered) events
    deterministic: int = 0
    max_gap: int = 2_000_000  # ns, pairing bracket limit
    max_residual: float = DEFAULT_MAX_RESIDUAL_M
    # realtime replay: stream seconds per wall second
    playback_speed: float = 1.0
    # None = run the cameras concurrently only when >= 4 CPUs are available
    parallel_cameras: bool | None = None
    seed: int = 0

    def __post_init__(self):
        if self.detector not in DETECTORS:
            raise ValueError(f"unknown detector {self.detector!r}; expected one of {DETECTORS}")
        if self.deterministic < 0:
            raise ValueError("deterministic cadence must be >= 0")
        if self.rate_hz < 0:
            raise ValueError("rate_hz must be >= 0")
        if not self.playback_speed > 0:
            raise ValueError("playback_speed must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        kw = dict(d)
        if "tracker" in kw and isinstance(kw["tracker"], dict):
            t = dict(kw["tracker"])
            if isinstance(t.get("hough"), dict):
                t["hough"] = HoughConfig(**t["hough"])
            if "r_range" in t:
                t["r_range"] = tuple(t["r_range"])
            kw["tracker"] = TrackerConfig(**t)
        for name, typ in (("median", MedianConfig), ("particle", ParticleConfig), ("blob", BlobConfig)):
            if name in kw and isinstance(kw[name], dict):
                sub = dict(kw[name])
                if "r_range" in sub:
                    sub["r_range"] = tuple(sub["r_range"])
                kw[name] = typ(**sub)
        known = {f.name for f in fields(cls)}
        unknown = set(kw) - known
        if unknown:
            raise ValueError(f"unknown pipeline config keys {sorted(unknown)}")
        return cls(**kw)

    def replace(self, **kw) -> "PipelineConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return PipelineConfig(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

