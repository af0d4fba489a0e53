from .buffers import EventRing, RingOverrun
from .config import DETECTORS, PipelineConfig
from .metrics import (MetricsReport, NoMatchError, circle_iou, eval_iou, eval_pixel_error, evaluate,
                      gt_duration, match_to_gt, rmse_3d, update_rate)
from .prediction import PredictionSeries, run_prediction_study, write_study
from .runner import CameraResult, PipelineResult, Timings, run_pipeline

__all__ = [
    "EventRing", "RingOverrun", "DETECTORS", "PipelineConfig", "MetricsReport", "NoMatchError",
    "circle_iou", "eval_iou", "eval_pixel_error", "evaluate", "gt_duration", "match_to_gt",
    "rmse_3d", "update_rate", "PredictionSeries", "run_prediction_study", "write_study",
    "CameraResult", "PipelineResult", "Timings", "run_pipeline",
]
