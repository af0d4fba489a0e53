"""Measurement-rate study: EKF uncertainty and prediction error per update rate."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..flight import BallParams, EkfParams, default_params, ekf_filter, em_fit
from ..flight.em import MIN_MEASUREMENTS, Trajectory
from ..simcam import subsample_rate

PREDICTION_HEADER = "t_ns,px,py,pz,vx,vy,vz,wx,wy,wz,trace_P_pos,trace_P_vel,trace_P_spin"
ERROR_HEADER = "t_ns,pos_err_m"


@dataclass(eq=False)
class PredictionSeries:
    rate_hz: float
    t: np.ndarray  # (n,) ns
    means: np.ndarray  # (n, 9) filtered
    trace_pos: np.ndarray
    trace_vel: np.ndarray
    trace_spin: np.ndarray
    # |one-step-ahead predicted position - reference| at each measurement time
    pos_err: np.ndarray
    params: EkfParams
    ll_trace: list[float]

    def at(self, t_ns: int) -> int:
        """Index of the latest estimate at or before ``t_ns``."""
        i = int(np.searchsorted(self.t, t_ns, side="right")) - 1
        if i < 0:
            raise ValueError("time before the first estimate")
        return i

    def first_below(self, threshold_m: float, skip_first: bool = True) -> int | None:
        """Time (ns) at which the prediction error first drops below ``threshold_m``."""
        start = 1 if skip_first else 0
        idx = np.nonzero(self.pos_err[start:] < threshold_m)[0]
        return int(self.t[start + idx[0]]) if idx.size else None


def initial_params(first: Sequence, sigma_obs: float = 0.005, dt_ref: float = 1e-3) -> EkfParams:
    """Broad prior at the first measured position: velocity and spin unknown."""
    mu0 = np.zeros(9)
    mu0[:3] = first
    return default_params(mu0, sigma_obs=sigma_obs, dt_ref=dt_ref, pos_std=0.05,
                          vel_std=5.0, spin_std=300.0)


def run_rate(obs: Sequence, rate_hz: float, bp: BallParams, em_iters: int = 10,
             reference: Callable[[int], np.ndarray] | None = None,
             train: Sequence[Sequence] | None = None,
             init: EkfParams | None = None) -> PredictionSeries:
    """Subsample to ``rate_hz``, fit parameters by EM, filter and score one trajectory.

    With ``train`` (other trajectories, subsampled the same way) all of
    Q, Rm, mu0 and P0 are fitted on them. Without it the fit uses ``obs``
    itself but only for the noise covariances; the initial state stays a broad
    prior at the first measurement so the evaluated trajectory is not leaked
    into its own initial condition.
    """
    sub = subsample_rate(list(obs), rate_hz)
    if len(sub) < MIN_MEASUREMENTS:
        raise ValueError(f"{len(sub)} measurements at {rate_hz} Hz; need >= {MIN_MEASUREMENTS}")
    tr = Trajectory.from_obs(sub)
    if train:
        fit_on = [Trajectory.from_obs(subsample_rate(list(o), rate_hz)) for o in train]
        em_vars = ("Q", "Rm", "mu0", "P0")
        start = init if init is not None else initial_params(
            np.mean([f.z[0] for f in fit_on], axis=0))
    else:
        fit_on = [tr]
        em_vars = ("Q", "Rm")
        start = init if init is not None else initial_params(tr.z[0])
    if em_iters > 0:
        ep, ll = em_fit(fit_on, bp, start, n_iter=em_iters, em_vars=em_vars)
    else:
        ep, ll = start, []
    beliefs, _, priors = ekf_filter(tr.t, tr.z, bp, ep, keep_priors=True)
    ref = np.array([reference(int(t)) for t in tr.t]) if reference is not None else tr.z
    pred = np.array([p.mean[:3] for p in priors])
    return PredictionSeries(
        rate_hz=float(rate_hz), t=tr.t.copy(), means=np.array([b.mean for b in beliefs]),
        trace_pos=np.array([b.block_trace("pos") for b in beliefs]),
        trace_vel=np.array([b.block_trace("vel") for b in beliefs]),
        trace_spin=np.array([b.block_trace("spin") for b in beliefs]),
        pos_err=np.linalg.norm(pred - ref, axis=1), params=ep, ll_trace=list(ll),
    )


def run_prediction_study(obs: Sequence, rates: Sequence[float], bp: BallParams | None = None,
                         em_iters: int = 10,
                         reference: Callable[[int], np.ndarray] | None = None,
                         train: Sequence[Sequence] | None = None
                         ) -> dict[float, PredictionSeries]:
    """For each rate: subsample, fit EKF parameters by EM at that rate, filter.

    ``reference(t_ns)`` gives the true position for the error series; without
    it the error is measured against the measurements themselves.
    """
    bp = bp or BallParams()
    return {float(r): run_rate(obs, r, bp, em_iters, reference, train) for r in rates}


def _rate_tag(rate: float) -> str:
    return f"{rate:g}".replace(".", "p")


def write_study(study: dict[float, PredictionSeries], out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for rate, s in study.items():
        tag = _rate_tag(rate)
        lines = [PREDICTION_HEADER]
        for i in range(len(s.t)):
            vals = list(s.means[i]) + [s.trace_pos[i], s.trace_vel[i], s.trace_spin[i]]
            lines.append(f"{int(s.t[i])}," + ",".join(repr(float(v)) for v in vals))
        p = out / f"prediction_{tag}hz.csv"
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(p)
        lines = [ERROR_HEADER] + [f"{int(t)},{float(e)!r}" for t, e in zip(s.t, s.pos_err)]
        p = out / f"error_{tag}hz.csv"
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(p)
        p = out / f"params_{tag}hz.json"
        doc = {"rate_hz": rate, "params": s.params.to_dict(), "em_loglik": s.ll_trace}
        p.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        written.append(p)
    return written
