"""Event-camera ball perception: EROS surface, Hough tracking, stereo and EKF prediction."""

__version__ = "0.1.0"
