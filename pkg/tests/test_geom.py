import json
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evball.geom import (CameraModel, GeometryError, Obs3D, PairedObs, interpolate_track,
                         load_calibration, look_at, pair_streams, project, read_obs_csv,
                         save_calibration, triangulate, triangulate_pairs, write_obs_csv)
from evball.simcam import default_cameras


@dataclass
class _Det:
    t: int
    cx: float
    cy: float


def _cam(**kw):
    return CameraModel(fx=500, fy=500, cx=320, cy=320, **kw)


def _stereo(baseline=3.0):
    cams = []
    for cid, sx in (("a", -0.5), ("b", 0.5)):
        R, t = look_at([sx * baseline, -3.0, 1.0], [0.0, 0.0, 0.5])
        cams.append(CameraModel(fx=1000, fy=1000, cx=640, cy=360, R=R, tvec=t, camera_id=cid))
    return cams


# --------------------------------------------------------------------------
# projection


def test_project_optical_axis():
    assert project(_cam(), (0, 0, 2)) == (320, 320)


def test_project_offset():
    u, v = project(_cam(), (0.1, 0, 2))
    assert u == pytest.approx(345) and v == pytest.approx(320)


def test_project_behind_camera():
    with pytest.raises(GeometryError, match="non-positive depth"):
        project(_cam(), (0, 0, -1))


def test_camera_rejects_bad_rotation():
    with pytest.raises(GeometryError):
        _cam(R=np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(GeometryError):
        CameraModel(fx=0, fy=500, cx=0, cy=0)


def test_look_at_centres_target():
    R, t = look_at([1.0, -2.0, 1.5], [0.2, 0.3, 0.4])
    cam = CameraModel(fx=800, fy=800, cx=400, cy=300, R=R, tvec=t)
    assert project(cam, [0.2, 0.3, 0.4]) == pytest.approx((400, 300), abs=1e-9)
    # image y points down: a point above the target projects to a smaller v
    assert project(cam, [0.2, 0.3, 0.6])[1] < 300


# --------------------------------------------------------------------------
# triangulation


def test_triangulate_example():
    a, b = _stereo()
    p = np.array([0.5, 1.0, 0.8])
    ob = triangulate(a, project(a, p), b, project(b, p))
    assert np.linalg.norm(ob.p - p) < 1e-9
    assert ob.residual < 1e-12


def test_triangulate_round_trip_1e3(rng):
    a, b = _stereo()
    pts = rng.uniform([-1.0, -0.5, 0.0], [1.0, 1.5, 1.5], size=(1000, 3))
    errs = [np.linalg.norm(triangulate(a, project(a, p), b, project(b, p)).p - p) for p in pts]
    assert max(errs) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.tuples(st.floats(-1, 1), st.floats(-0.5, 1.5), st.floats(0, 1.5)))
def test_triangulate_symmetric(p):
    a, b = _stereo()
    ab = triangulate(a, project(a, p), b, project(b, p))
    ba = triangulate(b, project(b, p), a, project(a, p))
    assert np.linalg.norm(ab.p - ba.p) < 1e-12


def test_triangulate_parallel_rays():
    c = _cam()
    with pytest.raises(GeometryError, match="parallel rays"):
        triangulate(c, (320, 320), c, (320, 320))


def test_triangulate_noise_monte_carlo(rng):
    # 3 m baseline, ball about 3 m from both cameras
    cams = []
    for cid, sx in (("a", -1.5), ("b", 1.5)):
        R, t = look_at([sx, -2.6, 0.5], [0.0, 0.0, 0.5])
        cams.append(CameraModel(fx=1100, fy=1100, cx=639.5, cy=359.5, R=R, tvec=t, camera_id=cid))
    a, b = cams
    p = np.array([0.0, 0.0, 0.5])
    assert np.linalg.norm(a.center - p) == pytest.approx(3.0, abs=0.05)
    ua, ub = np.array(project(a, p)), np.array(project(b, p))
    errs = [np.linalg.norm(triangulate(a, ua + rng.normal(0, 0.5, 2), b, ub + rng.normal(0, 0.5, 2)).p - p)
            for _ in range(1000)]
    assert np.median(errs) < 0.010


def test_triangulate_pairs_drops_large_residual():
    a, b = _stereo()
    p = np.array([0.0, 0.5, 0.5])
    good = project(a, p)
    bad = (good[0], good[1] + 80.0)
    pairs = [PairedObs(0, good, project(b, p)), PairedObs(1, bad, project(b, p))]
    out = triangulate_pairs(a, b, pairs, max_residual=0.01)
    assert [o.t for o in out] == [0]


# --------------------------------------------------------------------------
# pairing


def test_pair_interpolates_midpoint():
    a = [_Det(500_000, 10.0, 20.0)]
    b = [_Det(0, 100.0, 50.0), _Det(1_000_000, 110.0, 50.0)]
    (pr,) = pair_streams(a, b, 2_000_000)
    assert pr.t == 500_000
    assert pr.uv_a == (10.0, 20.0)
    assert pr.uv_b == pytest.approx((105.0, 50.0))


def test_pair_gap_rule():
    a = [_Det(2_500_000, 10.0, 20.0)]
    b = [_Det(0, 100.0, 50.0), _Det(5_000_000, 110.0, 50.0)]
    assert pair_streams(a, b, 2_000_000) == []


def test_pair_identity_on_equal_timestamps():
    ts = [0, 250_000, 700_000, 1_000_000]
    a = [_Det(t, float(i), 0.0) for i, t in enumerate(ts)]
    b = [_Det(t, float(10 + i), 1.0) for i, t in enumerate(ts)]
    prs = pair_streams(a, b, 1)
    assert [p.t for p in prs] == ts
    assert [p.uv_a for p in prs] == [(d.cx, d.cy) for d in a]
    assert [p.uv_b for p in prs] == [(d.cx, d.cy) for d in b]


def test_pair_sparse_stream_keeps_timestamps():
    a = [_Det(t, 0.0, 0.0) for t in range(0, 1_000_001, 100_000)]
    b = [_Det(350_000, 5.0, 5.0), _Det(650_000, 6.0, 5.0)]
    prs = pair_streams(a, b, 2_000_000)
    assert [p.t for p in prs] == [350_000, 650_000]
    assert [p.uv_b for p in prs] == [(5.0, 5.0), (6.0, 5.0)]


def test_pair_empty():
    assert pair_streams([], [_Det(0, 0, 0)], 10) == []


def test_interpolate_track_exact_and_unbracketed():
    ts = np.array([0, 10, 20])
    vals = np.array([[0.0], [1.0], [3.0]])
    assert interpolate_track(ts, vals, 10, None)[0] == 1.0
    assert interpolate_track(ts, vals, 15, None)[0] == pytest.approx(2.0)
    assert interpolate_track(ts, vals, 21, None) is None
    assert interpolate_track(ts, vals, -1, None) is None
    assert interpolate_track(ts, vals, 15, 5) is None


# --------------------------------------------------------------------------
# files


def test_calibration_round_trip(tmp_path):
    cams = default_cameras()
    save_calibration(cams, tmp_path / "c.json")
    back = load_calibration(tmp_path / "c.json")
    for c in cams:
        d = back[c.camera_id]
        assert (d.fx, d.fy, d.cx, d.cy, d.width, d.height) == (c.fx, c.fy, c.cx, c.cy, c.width, c.height)
        assert np.array_equal(d.R, c.R) and np.array_equal(d.tvec, c.tvec)


def test_calibration_rejects_distortion(tmp_path):
    save_calibration(default_cameras(), tmp_path / "c.json")
    doc = json.loads((tmp_path / "c.json").read_text())
    doc["cameras"][0]["dist"] = [0.1, 0, 0, 0, 0]
    (tmp_path / "d.json").write_text(json.dumps(doc))
    with pytest.raises(GeometryError, match="distortion"):
        load_calibration(tmp_path / "d.json")


def test_obs_csv_round_trip(tmp_path, rng):
    obs = [Obs3D(rng.normal(size=3), int(t), float(r)) for t, r in zip(range(0, 10_000, 250), rng.random(40))]
    write_obs_csv(obs, tmp_path / "o.csv")
    back = read_obs_csv(tmp_path / "o.csv")
    assert [o.t for o in back] == [o.t for o in obs]
    assert all(np.array_equal(a.p, b.p) and a.residual == b.residual for a, b in zip(obs, back))


def test_obs_csv_bad_header(tmp_path):
    (tmp_path / "o.csv").write_text("t,x,y,z\n")
    with pytest.raises(ValueError, match="header"):
        read_obs_csv(tmp_path / "o.csv")
