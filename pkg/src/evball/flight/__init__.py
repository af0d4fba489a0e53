from .dynamics import (BallParams, FlightState, continuous_jacobian, derivative, drag_constant,
                       integrate_rk4, rk4_jacobian, rollout)
from .ekf import (CovarianceError, EkfBelief, EkfParams, default_params, ekf_filter, ekf_predict,
                  ekf_smooth, ekf_update, rts_smooth)
from .em import Trajectory, em_fit, log_likelihood

__all__ = [
    "BallParams", "FlightState", "continuous_jacobian", "derivative", "drag_constant",
    "integrate_rk4", "rk4_jacobian", "rollout", "CovarianceError", "EkfBelief", "EkfParams",
    "default_params", "ekf_filter", "ekf_predict", "ekf_smooth", "ekf_update", "rts_smooth",
    "Trajectory", "em_fit", "log_likelihood",
]
