"""Simulate a stereo rally and compare the three detectors.

Prints one row per detector and mode with update rate, pixel error, IoU and
3D RMSE, and optionally writes the rows as JSON.

    python3 scripts/detector_table.py --duration 0.4 --seed 0 --out table.json
"""

import argparse
import json

from evball.pipeline import DETECTORS, PipelineConfig, evaluate, rmse_3d, run_pipeline
from evball.simcam import SimConfig, default_cameras, simulate


def _fmt(v, form):
    return f"{'-':>{form.split('.')[0]}}" if v is None else format(v, form)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--duration", type=float, default=SimConfig.duration)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", type=int, default=25, metavar="N",
                   help="events per detection in the reproducible mode")
    p.add_argument("--out", help="write the rows as JSON")
    args = p.parse_args(argv)

    cams = default_cameras()
    streams, gt = simulate(SimConfig(duration=args.duration, seed=args.seed), cams)
    rows = []
    for mode, n in (("realtime", 0), ("deterministic", args.deterministic)):
        for det in DETECTORS:
            res = run_pipeline(streams["cam_a"], streams["cam_b"], cams,
                               PipelineConfig(detector=det, deterministic=n))
            rep = evaluate(res.detections, gt)
            if res.obs:
                rep.rmse_3d_m = rmse_3d(res.obs, gt.states.position_at)
            rows.append({"mode": mode, "detector": det, "obs": len(res.obs), **rep.to_dict()})

    print(f"{'mode':<14}{'detector':<12}{'rate/s':>9}{'err px':>9}{'IoU':>7}{'3D mm':>8}")
    for r in rows:
        mm = None if r["rmse_3d_m"] is None else r["rmse_3d_m"] * 1e3
        print(f"{r['mode']:<14}{r['detector']:<12}{_fmt(r['update_rate'], '9.0f')}"
              f"{_fmt(r['pixel_error_mean'], '9.2f')}{_fmt(r['iou_mean'], '7.3f')}{_fmt(mm, '8.1f')}")
    if args.out:
        rows = [{k: v for k, v in r.items() if k != "per_camera"} for r in rows]
        with open(args.out, "w") as f:
            json.dump(rows, f, indent=2)


if __name__ == "__main__":
    main()
