"""EM estimation of EKF noise parameters (Q, Rm, mu0, P0).

E-step: extended RTS smoothing with the current parameters. M-step: the
closed-form linear-Gaussian updates, with the dynamics linearised at the
smoothed means. Because the linearisation makes the M-step approximate, a
step that lowers the innovation log-likelihood is pulled back towards the
previous parameters (halving the step) until it no longer does.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dynamics import BallParams, integrate_rk4, rk4_jacobian
from .ekf import NX, EkfParams, check_psd, ekf_filter, rts_smooth

log = logging.getLogger(__name__)

EM_VARS = ("Q", "Rm", "mu0", "P0")
MIN_MEASUREMENTS = 10
REG = 1e-9


@dataclass
class Trajectory:
    """Measurement times (ns) and positions (m) of one flight."""

    t: np.ndarray
    z: np.ndarray

    @classmethod
    def from_obs(cls, obs) -> "Trajectory":
        return cls(np.array([o.t for o in obs], dtype=np.int64),
                   np.array([o.p for o in obs], dtype=float).reshape(-1, 3))


def _as_traj(x) -> Trajectory:
    return x if isinstance(x, Trajectory) else Trajectory.from_obs(x)


def _regularize(P: np.ndarray, name: str) -> np.ndarray:
    P = 0.5 * (P + P.T)
    try:
        return check_psd(P, name)
    except FloatingPointError:
        return check_psd(P + REG * np.eye(P.shape[0]), name)


def log_likelihood(trajs: Sequence[Trajectory], bp: BallParams, ep: EkfParams) -> float:
    return sum(ekf_filter(tr.t, tr.z, bp, ep)[1] for tr in trajs)


def _e_step(trajs, bp, ep):
    out = []
    ll = 0.0
    for tr in trajs:
        beliefs, lli = ekf_filter(tr.t, tr.z, bp, ep)
        ll += lli
        out.append(rts_smooth(beliefs))
    return out, ll


def _m_step(trajs, smoothed, bp, ep, em_vars) -> EkfParams:
    new = ep.copy()
    if "Rm" in em_vars:
        acc = np.zeros((3, 3))
        n = 0
        for tr, sm in zip(trajs, smoothed):
            r = tr.z - sm.means[:, :3]
            acc += r.T @ r + sm.covs[:, :3, :3].sum(axis=0)
            n += len(tr.t)
        new.Rm = _regularize(acc / n, "Rm")
    if "Q" in em_vars:
        acc = np.zeros((NX, NX))
        n = 0
        for tr, sm in zip(trajs, smoothed):
            for k in range(len(tr.t) - 1):
                dt = (int(tr.t[k + 1]) - int(tr.t[k])) * 1e-9
                x = sm.means[k]
                F = rk4_jacobian(x, dt, bp)
                e = sm.means[k + 1] - integrate_rk4(x, dt, bp)
                C = sm.cross[k]
                M = np.outer(e, e) + sm.covs[k + 1] - F @ C.T - C @ F.T + F @ sm.covs[k] @ F.T
                acc += M * (ep.dt_ref / dt)
                n += 1
        new.Q = _regularize(acc / n, "Q")
    if "mu0" in em_vars:
        new.mu0 = np.mean([sm.means[0] for sm in smoothed], axis=0)
    if "P0" in em_vars:
        acc = np.zeros((NX, NX))
        for sm in smoothed:
            d = sm.means[0] - new.mu0
            acc += sm.covs[0] + np.outer(d, d)
        new.P0 = _regularize(acc / len(smoothed), "P0")
    return new


def _blend(a: EkfParams, b: EkfParams, alpha: float) -> EkfParams:
    return EkfParams(
        Q=a.Q + alpha * (b.Q - a.Q), Rm=a.Rm + alpha * (b.Rm - a.Rm),
        mu0=a.mu0 + alpha * (b.mu0 - a.mu0), P0=a.P0 + alpha * (b.P0 - a.P0), dt_ref=a.dt_ref,
    )


def em_fit(measurements, bp: BallParams, init: EkfParams, n_iter: int = 10,
           em_vars: Sequence[str] = EM_VARS, max_backtrack: int = 8,
           tol: float = 0.0) -> tuple[EkfParams, list[float]]:
    """Fit EKF parameters to one or more trajectories.

    ``measurements`` is a list of trajectories (each a sequence of ``Obs3D``
    or a :class:`Trajectory`); a single sequence of ``Obs3D`` is also accepted.
    Returns the best parameters and the log-likelihood trace, whose entry
    ``i`` is the likelihood after ``i`` iterations (entry 0 is ``init``).
    Stops early when an iteration gains less than ``tol``.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    bad = set(em_vars) - set(EM_VARS)
    if bad:
        raise ValueError(f"unknown EM variables {sorted(bad)}")
    if len(measurements) and not isinstance(measurements[0], (Trajectory, list, tuple)):
        measurements = [measurements]
    trajs = [_as_traj(m) for m in measurements]
    for tr in trajs:
        if len(tr.t) < MIN_MEASUREMENTS:
            raise ValueError(f"each trajectory needs >= {MIN_MEASUREMENTS} measurements")
    ep = init.copy()
    smoothed, ll = _e_step(trajs, bp, ep)
    trace = [ll]
    for it in range(n_iter):
        full = _m_step(trajs, smoothed, bp, ep, em_vars)
        cand = full
        alpha = 1.0
        accepted = False
        for _ in range(max_backtrack + 1):
            try:
                sm_c, ll_c = _e_step(trajs, bp, cand)
            except FloatingPointError:
                ll_c = -np.inf
            if ll_c >= ll:
                accepted = True
                break
            alpha *= 0.5
            cand = _blend(ep, full, alpha)
        if not accepted:
            log.debug("EM iteration %d: no ascent step found, stopping", it)
            trace.append(ll)
            break
        gain = ll_c - ll
        ep, smoothed, ll = cand, sm_c, ll_c
        trace.append(ll)
        log.debug("EM iteration %d: loglik %.6f (alpha %.3g)", it, ll, alpha)
        if gain < tol:
            break
    if not np.isfinite(ll):
        raise FloatingPointError("non-finite likelihood")
    return ep, trace
