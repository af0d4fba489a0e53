import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evball.flight import (BallParams, CovarianceError, EkfBelief, EkfParams, FlightState,
                           continuous_jacobian, default_params, derivative, drag_constant,
                           ekf_filter, ekf_predict, ekf_smooth, ekf_update, em_fit, integrate_rk4,
                           rk4_jacobian, rollout)
from evball.flight.ekf import check_psd
from evball.geom import Obs3D

NO_AIR = BallParams(k_d=0.0, k_m=0.0)
G = np.array([0.0, 0.0, -9.81])


def _x(p=(0, 0, 0), v=(0, 0, 0), w=(0, 0, 0)):
    return np.concatenate([p, v, w]).astype(float)


# --------------------------------------------------------------------------
# dynamics


def test_derivative_free_fall():
    d = derivative(FlightState(p=[0, 0, 1], v=[0, 0, 0]), BallParams())
    assert np.array_equal(d[3:6], G)
    assert np.array_equal(d[6:9], np.zeros(3))


def test_derivative_drag_example():
    d = derivative(_x(v=(4, 0, 0)), BallParams(k_d=0.112, k_m=0.0))
    # -0.112 * |v| * v_x = -0.112 * 4 * 4
    assert d[3:6] == pytest.approx([-1.792, 0.0, -9.81], abs=1e-12)


def test_drag_constant_formula():
    assert drag_constant(2.7e-3, 0.02) == pytest.approx(0.4 * 1.204 * math.pi * 0.02 ** 2 / (2 * 2.7e-3))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=3, max_size=3), st.integers(-4, 8), st.booleans())
def test_magnus_vanishes_for_parallel_spin(v, k, neg):
    # power-of-two scaling keeps w exactly parallel to v in floating point
    v = np.array(v)
    s = (-1.0 if neg else 1.0) * 2.0 ** k
    d = derivative(_x(v=v, w=s * v), BallParams(k_d=0.0, k_m=4e-4))
    assert np.array_equal(d[3:6], G)


def test_magnus_vanishes_example():
    d = derivative(_x(v=(4, 0, 0), w=(50, 0, 0)), BallParams(k_d=0.0, k_m=4e-4))
    assert np.array_equal(d[3:6], G)


def test_magnus_direction():
    # backspin-free topspin about +y with forward +x motion pushes down (w x v = -z)
    d = derivative(_x(v=(4, 0, 0), w=(0, 100, 0)), BallParams(k_d=0.0, k_m=4e-4))
    assert d[5] == pytest.approx(-9.81 - 4e-4 * 400)


def test_rk4_ballistic_exact():
    x = integrate_rk4(_x(v=(1, 0, 5)), 0.1, NO_AIR)
    assert np.allclose(x[:3], [0.1, 0.0, 0.5 - 0.5 * 9.81 * 0.01], rtol=0, atol=1e-12)
    assert np.allclose(x[3:6], [1.0, 0.0, 5 - 0.981], rtol=0, atol=1e-12)


def test_rk4_state_type_preserved():
    s = integrate_rk4(FlightState(p=[0, 0, 1], v=[1, 0, 0]), 1e-3, BallParams())
    assert isinstance(s, FlightState)


def test_rk4_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        integrate_rk4(_x(), 0.0, NO_AIR)


def _err(h, x0, T, bp, ref):
    return np.linalg.norm(rollout(x0, h, int(round(T / h)), bp)[-1] - ref)


def test_rk4_fourth_order_richardson():
    bp = BallParams(k_d=0.5, k_m=2e-3)
    x0 = _x(v=(12, 3, 4), w=(50, -300, 150))
    T = 0.2
    ref = rollout(x0, 1e-5, int(round(T / 1e-5)), bp)[-1]
    e1, e2 = _err(0.02, x0, T, bp, ref), _err(0.01, x0, T, bp, ref)
    assert 12 <= e1 / e2 <= 20


def test_rk4_step_doubling_ratio():
    # two steps of dt against one of 2 dt: local defect shrinks about 2^5 per halving,
    # the global error over a fixed horizon about 2^4
    bp = BallParams(k_d=0.5, k_m=2e-3)
    x0 = _x(v=(12, 3, 4), w=(50, -300, 150))

    def defect(dt):
        two = integrate_rk4(integrate_rk4(x0, dt, bp), dt, bp)
        return np.linalg.norm(two - integrate_rk4(x0, 2 * dt, bp))

    assert defect(0.01) / defect(0.005) > 16


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-15, 15), min_size=3, max_size=3),
       st.lists(st.floats(-400, 400), min_size=3, max_size=3))
def test_continuous_jacobian_matches_finite_differences(v, w):
    v = np.array(v)
    if np.linalg.norm(v) < 0.5:
        v = v + np.array([1.0, 0.0, 0.0])
    x = _x(p=(0.1, 0.2, 0.3), v=v, w=w)
    bp = BallParams()
    J = continuous_jacobian(x, bp)
    h = 1e-6
    fd = np.empty((9, 9))
    for j in range(9):
        e = np.zeros(9)
        e[j] = h
        fd[:, j] = (derivative(x + e, bp) - derivative(x - e, bp)) / (2 * h)
    assert np.max(np.abs(fd - J)) <= 1e-4 * max(1.0, np.max(np.abs(J)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-15, 15), min_size=3, max_size=3),
       st.lists(st.floats(-400, 400), min_size=3, max_size=3),
       st.sampled_from([1e-4, 1e-3, 5e-3]))
def test_rk4_jacobian_matches_finite_differences(v, w, dt):
    v = np.array(v)
    if np.linalg.norm(v) < 0.5:
        v = v + np.array([1.0, 0.0, 0.0])
    x = _x(p=(0.1, 0.2, 0.3), v=v, w=w)
    bp = BallParams()
    F = rk4_jacobian(x, dt, bp)
    fd = np.empty((9, 9))
    for j in range(9):
        h = 1e-6 * max(1.0, abs(x[j]))
        e = np.zeros(9)
        e[j] = h
        fd[:, j] = (integrate_rk4(x + e, dt, bp) - integrate_rk4(x - e, dt, bp)) / (2 * h)
    assert np.max(np.abs(fd - F)) < 1e-7


def test_discrete_jacobian_tends_to_continuous():
    x = _x(v=(4, 1, 2), w=(10, 200, -30))
    bp = BallParams()
    J = continuous_jacobian(x, bp)
    for dt in (1e-3, 1e-4):
        F = rk4_jacobian(x, dt, bp)
        assert np.max(np.abs((F - np.eye(9)) / dt - J)) < 10 * dt * np.max(np.abs(J)) ** 2 + 1e-4


def test_linear_transition_matrix():
    dt = 0.01
    F = rk4_jacobian(_x(v=(3, 1, 2), w=(1, 2, 3)), dt, NO_AIR)
    expect = np.eye(9)
    expect[0:3, 3:6] = dt * np.eye(3)
    assert np.max(np.abs(F - expect)) < 1e-6


def test_energy_decreases_with_drag_and_is_kept_without():
    x0 = _x(p=(0, 0, 1), v=(5, 0, 2), w=(0, 150, 0))

    def energy(xs):
        return 0.5 * np.sum(xs[:, 3:6] ** 2, axis=1) + 9.81 * xs[:, 2]

    drag = energy(rollout(x0, 1e-3, 300, BallParams()))
    assert np.all(np.diff(drag) < 0)
    # the Magnus force is perpendicular to v, so without drag energy is conserved
    free = energy(rollout(x0, 1e-3, 300, BallParams(k_d=0.0, k_m=4e-4)))
    assert np.max(np.abs(free - free[0])) < 1e-9


# --------------------------------------------------------------------------
# EKF


def _zero_q_params(mu0):
    return EkfParams(Q=np.zeros((9, 9)), Rm=np.eye(3) * 1e-4, mu0=mu0, P0=np.zeros((9, 9)))


def test_predict_deterministic_without_noise():
    x = _x(p=(0, 0, 1), v=(4, 0, 1), w=(0, 100, 0))
    b = EkfBelief(x, np.zeros((9, 9)))
    out = ekf_predict(b, 2e-3, BallParams(), _zero_q_params(x))
    assert np.array_equal(out.cov, np.zeros((9, 9)))
    assert np.array_equal(out.mean, integrate_rk4(x, 2e-3, BallParams()))
    assert out.t == 2_000_000


def test_predict_grows_uncertainty():
    ep = default_params(_x(p=(0, 0, 1), v=(4, 0, 1)))
    b = EkfBelief(ep.mu0, ep.P0)
    out = ekf_predict(b, 1e-3, BallParams(), ep)
    assert out.block_trace("pos") > b.block_trace("pos")


def test_predict_rejects_nonpositive_dt():
    ep = default_params()
    with pytest.raises(ValueError):
        ekf_predict(EkfBelief(ep.mu0, ep.P0), 0.0, BallParams(), ep)


def test_update_exact_measurement():
    ep = default_params(_x(p=(0, 0, 1), v=(4, 0, 0)))
    ep.Rm = np.eye(3) * 1e-12
    z = np.array([0.01, -0.02, 1.03])
    out = ekf_update(EkfBelief(ep.mu0, ep.P0), z, ep)
    assert np.allclose(out.mean[:3], z, rtol=0, atol=1e-6)


def test_update_uninformative_measurement():
    ep = default_params(_x(p=(0, 0, 1), v=(4, 0, 0), w=(0, 50, 0)))
    ep.Rm = np.eye(3) * 1e12
    b = EkfBelief(ep.mu0, ep.P0)
    out = ekf_update(b, [5.0, 5.0, 5.0], ep)
    assert np.allclose(out.mean, b.mean, rtol=1e-6, atol=1e-6)
    assert np.allclose(out.cov, b.cov, rtol=1e-6, atol=0)


def test_update_scalar_gain_by_hand():
    # x axis carries a (p, v) pair with cross covariance; the other axes are decoupled
    Pp, Pv, Ppv, R = 0.04, 1.0, 0.1, 0.01
    P = np.diag([Pp, 1.0, 1.0, Pv, 1.0, 1.0, 1.0, 1.0, 1.0])
    P[0, 3] = P[3, 0] = Ppv
    ep = EkfParams(Q=np.zeros((9, 9)), Rm=np.eye(3) * R, mu0=np.zeros(9), P0=P)
    out = ekf_update(EkfBelief(np.zeros(9), P), [0.5, 0.0, 0.0], ep)
    k_p, k_v = Pp / (Pp + R), Ppv / (Pp + R)
    assert out.mean[0] == pytest.approx(k_p * 0.5, abs=1e-15)
    assert out.mean[3] == pytest.approx(k_v * 0.5, abs=1e-15)
    assert out.cov[0, 0] == pytest.approx((1 - k_p) * Pp, abs=1e-15)
    assert out.cov[3, 3] == pytest.approx(Pv - k_v * Ppv, abs=1e-15)


def test_update_rejects_nonfinite():
    ep = default_params()
    with pytest.raises(ValueError):
        ekf_update(EkfBelief(ep.mu0, ep.P0), [np.nan, 0, 0], ep)


def test_check_psd_rejects_negative():
    with pytest.raises(CovarianceError):
        check_psd(np.diag([1.0, -1.0]))


def _measure(x0, n, dt, bp, sigma, rng, q=None):
    xs = [np.asarray(x0, float)]
    for _ in range(n - 1):
        nxt = integrate_rk4(xs[-1], dt, bp)
        if q is not None:
            nxt = nxt + rng.multivariate_normal(np.zeros(9), q)
        xs.append(nxt)
    xs = np.array(xs)
    t = np.arange(n, dtype=np.int64) * int(round(dt * 1e9))
    return t, xs, xs[:, :3] + rng.normal(0, sigma, (n, 3))


X0 = _x(p=(-1.2, 0.0, 0.3), v=(3.9, 0.0, 0.9), w=(0.0, 200.0, 0.0))


def test_covariances_psd_through_1000_cycles(rng):
    bp = BallParams()
    t, _, z = _measure(X0, 1000, 2.5e-4, bp, 0.005, rng)
    ep = default_params(z[0].tolist() + [0] * 6, pos_std=0.05, vel_std=5, spin_std=300)
    beliefs, _, priors = ekf_filter(t, z, bp, ep, keep_priors=True)
    assert len(beliefs) == 1000
    for b in beliefs + priors:
        assert np.array_equal(b.cov, b.cov.T)
        assert np.linalg.eigvalsh(b.cov)[0] >= -1e-12 * np.max(np.diag(b.cov))


def test_filter_tracks_truth(rng):
    bp = BallParams()
    t, xs, z = _measure(X0, 400, 1e-3, bp, 0.005, rng)
    ep = default_params(z[0].tolist() + [0] * 6, pos_std=0.05, vel_std=5, spin_std=300)
    beliefs, _ = ekf_filter(t, z, bp, ep)
    err = np.linalg.norm(np.array([b.mean[:3] for b in beliefs[200:]]) - xs[200:, :3], axis=1)
    assert np.mean(err) < 0.005


# --------------------------------------------------------------------------
# smoother


def test_smooth_single_step_is_identity():
    ep = default_params(X0)
    beliefs, _ = ekf_filter([0], [X0[:3]], BallParams(), ep)
    (s,) = ekf_smooth(beliefs)
    assert np.array_equal(s.mean, beliefs[0].mean) and np.array_equal(s.cov, beliefs[0].cov)


def test_smooth_matches_batch_least_squares(rng):
    # linear, drag-free model: the smoother is the exact MAP over all states
    dt = 1e-3
    n = 5
    ep = default_params(X0, sigma_obs=0.01, dt_ref=dt, spin_std=10.0, q_pos=1e-6, q_vel=1e-3, q_spin=1e-2)
    t, _, z = _measure(X0, n, dt, NO_AIR, 0.01, rng)
    beliefs, _ = ekf_filter(t, z, NO_AIR, ep)
    sm = ekf_smooth(beliefs)

    A = np.eye(9)
    A[0:3, 3:6] = dt * np.eye(3)
    b = np.zeros(9)
    b[0:3] = 0.5 * G * dt ** 2
    b[3:6] = G * dt
    Hm = np.hstack([np.eye(3), np.zeros((3, 6))])
    Qi, Ri, P0i = np.linalg.inv(ep.Q), np.linalg.inv(ep.Rm), np.linalg.inv(ep.P0)
    N = 9 * n
    Lam = np.zeros((N, N))
    eta = np.zeros(N)

    def blk(i):
        return slice(9 * i, 9 * i + 9)

    Lam[blk(0), blk(0)] += P0i
    eta[blk(0)] += P0i @ ep.mu0
    for k in range(n):
        Lam[blk(k), blk(k)] += Hm.T @ Ri @ Hm
        eta[blk(k)] += Hm.T @ Ri @ z[k]
    for k in range(n - 1):
        # residual x_{k+1} - A x_k - b
        Lam[blk(k + 1), blk(k + 1)] += Qi
        Lam[blk(k), blk(k)] += A.T @ Qi @ A
        Lam[blk(k + 1), blk(k)] -= Qi @ A
        Lam[blk(k), blk(k + 1)] -= A.T @ Qi
        eta[blk(k + 1)] += Qi @ b
        eta[blk(k)] -= A.T @ Qi @ b
    cov = np.linalg.inv(Lam)
    mean = cov @ eta
    for k in range(n):
        scale = np.abs(mean[blk(k)]) + 1.0
        assert np.all(np.abs(sm[k].mean - mean[blk(k)]) <= 1e-6 * scale)
        assert np.allclose(sm[k].cov, cov[blk(k), blk(k)], rtol=1e-6, atol=1e-12)


def test_smoother_never_increases_uncertainty(rng):
    bp = BallParams()
    t, _, z = _measure(X0, 200, 1e-3, bp, 0.005, rng)
    ep = default_params(z[0].tolist() + [0] * 6, pos_std=0.05, vel_std=5, spin_std=300)
    beliefs, _ = ekf_filter(t, z, bp, ep)
    for f, s in zip(beliefs, ekf_smooth(beliefs)):
        assert np.trace(s.cov) <= np.trace(f.cov) * (1 + 1e-9)
        assert np.linalg.eigvalsh(f.cov - s.cov)[0] >= -1e-9 * np.max(np.diag(f.cov))


# --------------------------------------------------------------------------
# EM


def _obs(t, z):
    return [Obs3D(p, int(ti), 0.0) for ti, p in zip(t, z)]


@pytest.fixture(scope="module")
def em_data():
    rng = np.random.default_rng(7)
    bp = BallParams()
    trajs = []
    for i in range(3):
        x0 = X0 + np.concatenate([rng.normal(0, 0.02, 3), rng.normal(0, 0.2, 3), rng.normal(0, 20, 3)])
        t, _, z = _measure(x0, 300, 1e-3, bp, 0.005, rng)
        trajs.append(_obs(t, z))
    return bp, trajs


def test_em_recovers_observation_noise(em_data):
    bp, trajs = em_data
    mu0 = np.concatenate([np.mean([tr[0].p for tr in trajs], axis=0), np.zeros(6)])
    init = default_params(mu0, sigma_obs=0.02, pos_std=0.05, vel_std=5, spin_std=300)
    ep, ll = em_fit(trajs, bp, init, n_iter=20)
    sigma = math.sqrt(np.trace(ep.Rm) / 3)
    assert 0.0025 <= sigma <= 0.010
    assert all(b >= a - 1e-6 for a, b in zip(ll, ll[1:]))


def test_em_likelihood_monotone_from_poor_start(em_data):
    bp, trajs = em_data
    init = default_params(np.concatenate([trajs[0][0].p, np.zeros(6)]), sigma_obs=0.05,
                          pos_std=0.05, vel_std=5, spin_std=300, q_vel=1e-2)
    _, ll = em_fit(trajs, bp, init, n_iter=8)
    assert len(ll) >= 2
    assert all(b >= a - 1e-6 for a, b in zip(ll, ll[1:]))
    assert ll[-1] > ll[0]


def test_em_near_fixed_point(rng):
    bp = BallParams()
    ep = default_params(X0, sigma_obs=0.005, pos_std=0.01, vel_std=0.1, spin_std=10)
    trajs = []
    for _ in range(3):
        x0 = rng.multivariate_normal(ep.mu0, ep.P0)
        t, _, z = _measure(x0, 300, 1e-3, bp, 0.005, rng, q=ep.Q)
        trajs.append(_obs(t, z))
    _, ll = em_fit(trajs, bp, ep, n_iter=1)
    assert abs(ll[1] - ll[0]) < 0.01 * abs(ll[0])


def test_em_validation(em_data):
    bp, trajs = em_data
    init = default_params()
    with pytest.raises(ValueError):
        em_fit(trajs, bp, init, n_iter=0)
    with pytest.raises(ValueError):
        em_fit(trajs, bp, init, em_vars=("Q", "bogus"))
    with pytest.raises(ValueError):
        em_fit([trajs[0][:5]], bp, init)


def test_params_round_trip(tmp_path):
    ep = default_params(X0)
    ep.save(tmp_path / "p.json")
    back = EkfParams.load(tmp_path / "p.json")
    for name in ("Q", "Rm", "mu0", "P0"):
        assert np.array_equal(getattr(back, name), getattr(ep, name))
    assert back.dt_ref == ep.dt_ref


def test_ball_params_from_dict_derives_drag():
    bp = BallParams.from_dict({"mass": 3e-3, "radius": 0.02})
    assert bp.k_d == pytest.approx(drag_constant(3e-3, 0.02))
    with pytest.raises(ValueError):
        BallParams(mass=0)
