from .blob import BlobConfig, blob_init, event_count_frame
from .hough import CircleDetection, HoughConfig, Roi, hough_detect, render_ring
from .median import MedianConfig, MedianPosition, median_detect
from .particle import ParticleConfig, ParticleSet, perimeter_support, pf_init, pf_step
from .records import DETECTIONS_HEADER, read_detections, write_detections
from .tracker import INITIALIZING, TRACKING, TrackerConfig, TrackerState, track_step

__all__ = [
    "BlobConfig", "blob_init", "event_count_frame", "CircleDetection", "HoughConfig", "Roi",
    "hough_detect", "render_ring", "MedianConfig", "MedianPosition", "median_detect",
    "ParticleConfig", "ParticleSet", "perimeter_support", "pf_init", "pf_step",
    "DETECTIONS_HEADER", "read_detections", "write_detections", "INITIALIZING", "TRACKING",
    "TrackerConfig", "TrackerState", "track_step",
]
