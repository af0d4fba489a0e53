"""Mid-air ball dynamics: gravity, quadratic drag and Magnus lift.

State vector layout (9,): position p (m), velocity v (m/s), spin w (rad/s).

    dp/dt = v
    dv/dt = g - k_d |v| v + k_m (w x v)
    dw/dt = 0
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

AIR_DENSITY = 1.204
DRAG_COEFFICIENT = 0.4


def drag_constant(mass: float, radius: float, rho: float = AIR_DENSITY,
                  c_d: float = DRAG_COEFFICIENT) -> float:
    """``k_d = c_d * rho * pi * r^2 / (2 m)`` in 1/m."""
    return 0.5 * c_d * rho * math.pi * radius ** 2 / mass


@dataclass(frozen=True, eq=False)
class BallParams:
    mass: float = 2.7e-3
    radius: float = 0.02
    k_d: float = drag_constant(2.7e-3, 0.02)
    k_m: float = 4.0e-4
    g: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def __post_init__(self):
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float).reshape(3))
        if self.mass <= 0 or self.radius <= 0:
            raise ValueError("mass and radius must be positive")
        if self.k_d < 0:
            raise ValueError("k_d must be non-negative")

    def to_dict(self) -> dict:
        return {"mass": self.mass, "radius": self.radius, "k_d": self.k_d,
                "k_m": self.k_m, "g": self.g.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "BallParams":
        base = cls()
        k_d = d.get("k_d")
        if k_d is None:
            k_d = drag_constant(d.get("mass", base.mass), d.get("radius", base.radius),
                                d.get("air_density", AIR_DENSITY),
                                d.get("drag_coefficient", DRAG_COEFFICIENT))
        return cls(mass=d.get("mass", base.mass), radius=d.get("radius", base.radius),
                   k_d=k_d, k_m=d.get("k_m", base.k_m), g=d.get("g", base.g))


@dataclass(frozen=True, eq=False)
class FlightState:
    p: np.ndarray
    v: np.ndarray
    w: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("p", "v", "w"):
            a = np.asarray(getattr(self, name), dtype=float).reshape(3)
            if not np.all(np.isfinite(a)):
                raise ValueError(f"non-finite {name}")
            object.__setattr__(self, name, a)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, self.w])

    @classmethod
    def from_vector(cls, x) -> "FlightState":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3], x[3:6], x[6:9])


@numba.njit(cache=True)
def _deriv(x, g, k_d, k_m, out):
    vx, vy, vz = x[3], x[4], x[5]
    wx, wy, wz = x[6], x[7], x[8]
    speed = math.sqrt(vx * vx + vy * vy + vz * vz)
    out[0] = vx
    out[1] = vy
    out[2] = vz
    out[3] = g[0] - k_d * speed * vx + k_m * (wy * vz - wz * vy)
    out[4] = g[1] - k_d * speed * vy + k_m * (wz * vx - wx * vz)
    out[5] = g[2] - k_d * speed * vz + k_m * (wx * vy - wy * vx)
    out[6] = 0.0
    out[7] = 0.0
    out[8] = 0.0


@numba.njit(cache=True)
def _rk4(x, dt, g, k_d, k_m):
    k1 = np.empty(9)
    k2 = np.empty(9)
    k3 = np.empty(9)
    k4 = np.empty(9)
    tmp = np.empty(9)
    _deriv(x, g, k_d, k_m, k1)
    for i in range(9):
        tmp[i] = x[i] + 0.5 * dt * k1[i]
    _deriv(tmp, g, k_d, k_m, k2)
    for i in range(9):
        tmp[i] = x[i] + 0.5 * dt * k2[i]
    _deriv(tmp, g, k_d, k_m, k3)
    for i in range(9):
        tmp[i] = x[i] + dt * k3[i]
    _deriv(tmp, g, k_d, k_m, k4)
    out = np.empty(9)
    for i in range(9):
        out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return out


@numba.njit(cache=True)
def _jac(x, k_d, k_m, J):
    vx, vy, vz = x[3], x[4], x[5]
    wx, wy, wz = x[6], x[7], x[8]
    speed = math.sqrt(vx * vx + vy * vy + vz * vz)
    for i in range(9):
        for j in range(9):
            J[i, j] = 0.0
    J[0, 3] = 1.0
    J[1, 4] = 1.0
    J[2, 5] = 1.0
    v = (vx, vy, vz)
    for i in range(3):
        for j in range(3):
            a = speed if i == j else 0.0
            if speed > 0.0:
                a += v[i] * v[j] / speed
            J[3 + i, 3 + j] = -k_d * a
    # d(w x v)/dv = [w]x and d(w x v)/dw = -[v]x
    J[3, 4] += -k_m * wz
    J[3, 5] += k_m * wy
    J[4, 3] += k_m * wz
    J[4, 5] += -k_m * wx
    J[5, 3] += -k_m * wy
    J[5, 4] += k_m * wx
    J[3, 7] = k_m * vz
    J[3, 8] = -k_m * vy
    J[4, 6] = -k_m * vz
    J[4, 8] = k_m * vx
    J[5, 6] = k_m * vy
    J[5, 7] = -k_m * vx


@numba.njit(cache=True)
def _rk4_jacobian(x, dt, g, k_d, k_m):
    # tangent-linear RK4: chain rule through the four stages
    k = np.empty(9)
    J = np.empty((9, 9))
    tmp = np.empty(9)
    eye = np.eye(9)
    _deriv(x, g, k_d, k_m, k)
    _jac(x, k_d, k_m, J)
    K1 = J.copy()
    for i in range(9):
        tmp[i] = x[i] + 0.5 * dt * k[i]
    _deriv(tmp, g, k_d, k_m, k)
    _jac(tmp, k_d, k_m, J)
    K2 = J @ (eye + 0.5 * dt * K1)
    for i in range(9):
        tmp[i] = x[i] + 0.5 * dt * k[i]
    _deriv(tmp, g, k_d, k_m, k)
    _jac(tmp, k_d, k_m, J)
    K3 = J @ (eye + 0.5 * dt * K2)
    for i in range(9):
        tmp[i] = x[i] + dt * k[i]
    _jac(tmp, k_d, k_m, J)
    K4 = J @ (eye + dt * K3)
    return eye + dt / 6.0 * (K1 + 2.0 * K2 + 2.0 * K3 + K4)


def derivative(state, bp: BallParams) -> np.ndarray:
    """Time derivative of a state (``FlightState`` or 9-vector) as a 9-vector."""
    x = state.to_vector() if isinstance(state, FlightState) else np.asarray(state, float)
    out = np.empty(9)
    _deriv(x, bp.g, bp.k_d, bp.k_m, out)
    return out


def continuous_jacobian(x, bp: BallParams) -> np.ndarray:
    """Analytic d(derivative)/dx (numpy; the compiled RK4 Jacobian has its own copy)."""
    x = np.asarray(x, float)
    v, w = x[3:6], x[6:9]
    speed = np.linalg.norm(v)
    J = np.zeros((9, 9))
    J[0:3, 3:6] = np.eye(3)
    dvv = -bp.k_d * (speed * np.eye(3) + (np.outer(v, v) / speed if speed > 0 else 0.0))

    def skew(a):
        return np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])

    J[3:6, 3:6] = dvv + bp.k_m * skew(w)
    J[3:6, 6:9] = -bp.k_m * skew(v)
    return J


def integrate_rk4(state, dt: float, bp: BallParams):
    """One classical RK4 step; accepts and returns the same type (FlightState or vector)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    as_state = isinstance(state, FlightState)
    x = state.to_vector() if as_state else np.asarray(state, float)
    out = _rk4(x, float(dt), bp.g, bp.k_d, bp.k_m)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite state after RK4 step")
    return FlightState.from_vector(out) if as_state else out


def rk4_jacobian(x, dt: float, bp: BallParams) -> np.ndarray:
    """Exact derivative of the one-step RK4 map with respect to the state."""
    return _rk4_jacobian(np.asarray(x, float), float(dt), bp.g, bp.k_d, bp.k_m)


def rollout(x0, dt: float, n_steps: int, bp: BallParams) -> np.ndarray:
    """``n_steps`` RK4 steps; returns an ``(n_steps + 1, 9)`` array including ``x0``."""
    out = np.empty((n_steps + 1, 9))
    out[0] = x0
    for i in range(n_steps):
        out[i + 1] = integrate_rk4(out[i], dt, bp)
    return out
