"""Extended Kalman filter and RTS smoother for the 9-state ball model.

Only positions are measured (``H = [I3 0 0]``). Process noise is specified
for a nominal step ``dt_ref`` and scaled linearly with the actual step, so
asynchronous measurements can be fed with variable spacing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dynamics import BallParams, integrate_rk4, rk4_jacobian

NX = 9
NZ = 3
H = np.hstack([np.eye(3), np.zeros((3, 6))])
PSD_TOL = 1e-9
_LOG2PI = math.log(2.0 * math.pi)


class CovarianceError(FloatingPointError):
    pass


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def check_psd(P: np.ndarray, what: str = "covariance") -> np.ndarray:
    """Symmetrise ``P``; raise :class:`CovarianceError` if it is not PSD to tolerance."""
    P = _sym(P)
    if not np.all(np.isfinite(P)):
        raise CovarianceError(f"non-finite {what}")
    scale = max(1.0, float(np.max(np.abs(np.diag(P)))))
    if np.linalg.eigvalsh(P)[0] < -PSD_TOL * scale:
        raise CovarianceError(f"{what} is not positive semidefinite")
    return P


@dataclass(eq=False)
class EkfParams:
    Q: np.ndarray
    Rm: np.ndarray
    mu0: np.ndarray
    P0: np.ndarray
    dt_ref: float = 1e-3

    def __post_init__(self):
        self.Q = np.asarray(self.Q, float).reshape(NX, NX)
        self.Rm = np.asarray(self.Rm, float).reshape(NZ, NZ)
        self.mu0 = np.asarray(self.mu0, float).reshape(NX)
        self.P0 = np.asarray(self.P0, float).reshape(NX, NX)

    def validate(self) -> None:
        for name in ("Q", "Rm", "P0"):
            check_psd(getattr(self, name), name)

    def to_dict(self) -> dict:
        return {"Q": self.Q.reshape(-1).tolist(), "Rm": self.Rm.reshape(-1).tolist(),
                "mu0": self.mu0.tolist(), "P0": self.P0.reshape(-1).tolist(),
                "dt_ref": self.dt_ref}

    @classmethod
    def from_dict(cls, d: dict) -> "EkfParams":
        return cls(Q=d["Q"], Rm=d["Rm"], mu0=d["mu0"], P0=d["P0"], dt_ref=d.get("dt_ref", 1e-3))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EkfParams":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def copy(self) -> "EkfParams":
        return EkfParams(self.Q.copy(), self.Rm.copy(), self.mu0.copy(), self.P0.copy(), self.dt_ref)


def default_params(mu0=None, sigma_obs: float = 0.005, dt_ref: float = 1e-3,
                   pos_std: float = 0.1, vel_std: float = 1.0, spin_std: float = 100.0,
                   q_pos: float = 1e-8, q_vel: float = 1e-4, q_spin: float = 1e-2) -> EkfParams:
    """Diagonal starting point for filtering or EM."""
    mu0 = np.zeros(NX) if mu0 is None else np.asarray(mu0, float)
    return EkfParams(
        Q=np.diag([q_pos] * 3 + [q_vel] * 3 + [q_spin] * 3),
        Rm=np.eye(3) * sigma_obs ** 2,
        mu0=mu0,
        P0=np.diag([pos_std ** 2] * 3 + [vel_std ** 2] * 3 + [spin_std ** 2] * 3),
        dt_ref=dt_ref,
    )


@dataclass(eq=False)
class EkfBelief:
    """Gaussian belief at time ``t`` (ns).

    Filtered beliefs also carry the one-step prediction they were updated
    from (``pred_mean``, ``pred_cov``), the Jacobian ``jac`` of the transition
    that produced that prediction and its step ``dt`` (s); the smoother needs them.
    """

    mean: np.ndarray
    cov: np.ndarray
    t: int = 0
    pred_mean: np.ndarray | None = None
    pred_cov: np.ndarray | None = None
    jac: np.ndarray | None = None
    dt: float = 0.0

    def block_trace(self, block: str) -> float:
        i = {"pos": 0, "vel": 3, "spin": 6}[block]
        return float(np.trace(self.cov[i:i + 3, i:i + 3]))


def ekf_predict(b: EkfBelief, dt: float, bp: BallParams, ep: EkfParams) -> EkfBelief:
    if not dt > 0:
        raise ValueError("dt must be positive")
    F = rk4_jacobian(b.mean, dt, bp)
    mean = integrate_rk4(b.mean, dt, bp)
    cov = check_psd(F @ b.cov @ F.T + ep.Q * (dt / ep.dt_ref), "predicted covariance")
    t = b.t + int(round(dt * 1e9))
    return EkfBelief(mean, cov, t, mean, cov, F, dt)


def _update(b: EkfBelief, z, ep: EkfParams) -> tuple[EkfBelief, float]:
    z = np.asarray(z, float).reshape(NZ)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite measurement")
    P = b.cov
    S = _sym(P[:3, :3] + ep.Rm)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise CovarianceError("innovation covariance not invertible") from None
    y = z - b.mean[:3]
    # K = P H^T S^-1 via the Cholesky factor
    PHt = P[:, :3]
    K = np.linalg.solve(L.T, np.linalg.solve(L, PHt.T)).T
    mean = b.mean + K @ y
    IKH = np.eye(NX)
    IKH[:, :3] -= K
    cov = _sym(IKH @ P @ IKH.T + K @ ep.Rm @ K.T)
    alpha = np.linalg.solve(L, y)
    ll = -0.5 * (alpha @ alpha) - np.log(np.diag(L)).sum() - 0.5 * NZ * _LOG2PI
    return replace(b, mean=mean, cov=cov), float(ll)


def ekf_update(b: EkfBelief, z, ep: EkfParams) -> EkfBelief:
    """Measurement update with ``z`` = measured position (m); Joseph-form covariance."""
    return _update(b, z, ep)[0]


def initial_belief(ep: EkfParams, t: int) -> EkfBelief:
    return EkfBelief(ep.mu0.copy(), ep.P0.copy(), int(t), ep.mu0.copy(), ep.P0.copy(), None, 0.0)


def ekf_filter(times_ns: Sequence[int], zs, bp: BallParams, ep: EkfParams,
               keep_priors: bool = False):
    """Filter a measurement sequence; the prior ``(mu0, P0)`` applies at the first timestamp.

    Returns ``(beliefs, loglik)`` or, with ``keep_priors``, ``(beliefs, loglik, priors)``
    where ``priors[i]`` is the prediction the i-th update started from.
    """
    times_ns = np.asarray(times_ns, dtype=np.int64)
    zs = np.asarray(zs, float)
    if len(times_ns) == 0:
        return ([], 0.0, []) if keep_priors else ([], 0.0)
    b = initial_belief(ep, int(times_ns[0]))
    beliefs, priors = [], []
    ll = 0.0
    for i in range(len(times_ns)):
        if i > 0:
            dt = (int(times_ns[i]) - int(times_ns[i - 1])) * 1e-9
            b = ekf_predict(b, dt, bp, ep)
            b.t = int(times_ns[i])
        if keep_priors:
            priors.append(b)
        b, lli = _update(b, zs[i], ep)
        ll += lli
        beliefs.append(b)
    if not math.isfinite(ll):
        raise FloatingPointError("non-finite log-likelihood")
    return (beliefs, ll, priors) if keep_priors else (beliefs, ll)


@dataclass(eq=False)
class SmoothResult:
    means: np.ndarray  # (T, 9)
    covs: np.ndarray  # (T, 9, 9)
    # cross[k] = Cov(x_{k+1}, x_k | all data), shape (T-1, 9, 9)
    cross: np.ndarray = field(default_factory=lambda: np.zeros((0, NX, NX)))


def rts_smooth(beliefs: Sequence[EkfBelief]) -> SmoothResult:
    T = len(beliefs)
    means = np.array([b.mean for b in beliefs])
    covs = np.array([b.cov for b in beliefs])
    cross = np.zeros((max(T - 1, 0), NX, NX))
    for k in range(T - 2, -1, -1):
        nxt = beliefs[k + 1]
        if nxt.pred_cov is None or nxt.jac is None:
            raise ValueError("belief lacks stored prediction")
        F = nxt.jac
        Pp = nxt.pred_cov
        try:
            J = np.linalg.solve(Pp, F @ beliefs[k].cov).T
        except np.linalg.LinAlgError:
            raise CovarianceError("singular predicted covariance") from None
        means[k] = beliefs[k].mean + J @ (means[k + 1] - nxt.pred_mean)
        covs[k] = _sym(beliefs[k].cov + J @ (covs[k + 1] - Pp) @ J.T)
        cross[k] = covs[k + 1] @ J.T
    return SmoothResult(means, covs, cross)


def ekf_smooth(beliefs: Sequence[EkfBelief], bp: BallParams | None = None,
               ep: EkfParams | None = None) -> list[EkfBelief]:
    """Rauch-Tung-Striebel backward pass over filtered beliefs.

    The per-step Jacobians stored with the beliefs are reused, so ``bp`` and
    ``ep`` are accepted for interface symmetry only.
    """
    if len(beliefs) <= 1:
        return [replace(b) for b in beliefs]
    sm = rts_smooth(beliefs)
    return [replace(b, mean=sm.means[i], cov=sm.covs[i]) for i, b in enumerate(beliefs)]
