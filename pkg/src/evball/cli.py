"""Command-line interface: sim, run, eval, predict, bench.

Every subcommand exits 0 on success. Failures print one JSON object
``{"error": <kind>, "message": <text>}`` on stderr and exit 1 (2 for usage).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# sim


def cmd_sim(args) -> int:
    from .geom import save_calibration
    from .evstream import write_events
    from .simcam import SimConfig, default_cameras, simulate

    doc = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    cam_doc = doc.pop("cameras", {})
    cfg = SimConfig.from_dict(doc)
    cams = default_cameras(**cam_doc)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    streams, gt = simulate(cfg, cams)
    ext = "csv" if args.format == "csv" else "bin"
    files = {}
    for cid, (header, ev) in streams.items():
        p = out / f"events_{cid}.{ext}"
        write_events(header, ev, p, args.format)
        files[cid] = p.name
    gt.save(out / "gt.json")
    save_calibration(cams, out / "calib.json")
    resolved = cfg.to_dict()
    resolved["cameras"] = cam_doc
    _write_json(out / "sim_config.json", resolved)
    print(json.dumps({"events": files, "gt": "gt.json", "calib": "calib.json",
                      "n_events": {cid: int(len(e)) for cid, (_, e) in streams.items()}},
                     sort_keys=True))
    return 0


# --------------------------------------------------------------------------
# run


def cmd_run(args) -> int:
    from .detect import write_detections
    from .geom import write_obs_csv
    from .pipeline import PipelineConfig, run_pipeline

    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    kw = {"detector": args.detector, "calibration": args.calib}
    if args.deterministic is not None:
        kw["deterministic"] = args.deterministic
    if args.rate_hz is not None:
        kw["rate_hz"] = args.rate_hz
    cfg = cfg.replace(**kw)
    res = run_pipeline(args.events_a, args.events_b, args.calib, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dets = [d for cid in sorted(res.detections) for d in res.detections[cid]]
    write_detections(dets, out / "detections.csv")
    write_obs_csv(res.obs, out / "triangulated.csv")
    # wall-clock figures would break byte-identical deterministic outputs
    runtimes = res.mode == "realtime" or args.timings
    _write_json(out / "timings.json", res.timings_dict(runtimes))
    print(json.dumps({"mode": res.mode, "detections": len(dets), "obs": len(res.obs)}))
    return 0


# --------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    from .detect import read_detections
    from .pipeline import evaluate
    from .simcam import GroundTruth

    dets = read_detections(args.dets)
    gt = GroundTruth.load(args.gt)
    by_cam: dict = {}
    for d in dets:
        by_cam.setdefault(d.camera_id, []).append(d)
    missing = set(by_cam) - set(gt.cameras)
    if missing:
        raise ValueError(f"detections for cameras without ground truth: {sorted(missing)}")
    rep = evaluate(by_cam, gt)
    doc = rep.to_dict()
    _write_json(args.out, doc)
    print(json.dumps({k: doc[k] for k in ("update_rate", "pixel_error_mean", "iou_mean")}))
    return 0


# --------------------------------------------------------------------------
# predict


def cmd_predict(args) -> int:
    from .flight import BallParams
    from .geom import read_obs_csv
    from .pipeline import run_prediction_study, write_study
    from .simcam import GroundTruth

    obs = read_obs_csv(args.obs)
    rates = [float(r) for r in args.rates.split(",") if r.strip()]
    if not rates:
        raise ValueError("no rates given")
    bp = BallParams.from_dict(json.loads(Path(args.ball).read_text(encoding="utf-8"))) \
        if args.ball else BallParams()
    ref = GroundTruth.load(args.gt).states.position_at if args.gt else None
    train = [read_obs_csv(f) for f in args.train.split(",") if f.strip()] if args.train else None
    study = run_prediction_study(obs, rates, bp, args.em_iters, ref, train)
    files = write_study(study, args.out)
    print(json.dumps({"files": [p.name for p in files]}))
    return 0


# --------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    from .detect import Roi, hough_detect
    from .eros import ErosSurface
    from .evstream import read_events, trail_filter

    header, ev = read_events(args.events)
    if len(ev) == 0:
        raise ValueError("no events to benchmark")
    kept = trail_filter(ev, header=header)
    doc = {"n_events": int(len(ev)), "n_filtered": int(len(kept)), "k_eros": args.k_eros}
    # warm-up compiles the kernels
    ErosSurface(header.width, header.height, args.k_eros).update_many(kept[:64])
    rates = []
    for _ in range(args.repeat):
        s = ErosSurface(header.width, header.height, args.k_eros)
        t0 = time.perf_counter()
        s.update_many(kept)
        rates.append(len(kept) / (time.perf_counter() - t0))
    doc["eros_events_per_s"] = {"mean": float(np.mean(rates)), "max": float(np.max(rates))}
    t0 = time.perf_counter()
    trail_filter(ev, header=header)
    doc["trail_filter_events_per_s"] = len(ev) / (time.perf_counter() - t0)
    # detection runtimes on the surface half-way through the stream
    s = ErosSurface(header.width, header.height, args.k_eros)
    s.update_many(kept[: len(kept) // 2])
    img = s.snapshot()
    r_range = tuple(args.r_range)
    det = hough_detect(img, r_range)
    stages = {}
    runs = [("detect_full", None)]
    if det is not None:
        runs.append(("detect_roi", Roi(det.cx, det.cy, 3.0 * r_range[1])))
    for name, roi in runs:
        ts = []
        for _ in range(args.repeat * 20):
            t0 = time.perf_counter()
            hough_detect(img, r_range, roi)
            ts.append((time.perf_counter() - t0) * 1e6)
        stages[name] = {"mean_us": float(np.mean(ts)), "std_us": float(np.std(ts, ddof=1))}
    doc["stages"] = stages
    out = json.dumps(doc, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(out + "\n", encoding="utf-8")
    print(out)
    return 0


# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(json.dumps({"error": "usage", "message": message}) + "\n")
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="evball", description="Event-camera ball perception pipeline")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    s = sub.add_parser("sim", help="simulate a stereo event recording")
    s.add_argument("--config", help="SimConfig JSON (optional 'cameras' block)")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--format", choices=("bin", "csv"), default="bin")
    s.set_defaults(func=cmd_sim)

    s = sub.add_parser("run", help="detect, pair and triangulate")
    s.add_argument("--events-a", required=True)
    s.add_argument("--events-b", required=True)
    s.add_argument("--calib", required=True)
    s.add_argument("--detector", choices=("eros_hough", "median", "particle"), default="eros_hough")
    s.add_argument("--deterministic", type=int, metavar="N",
                   help="detect after every N ingested events (reproducible)")
    s.add_argument("--config", help="PipelineConfig JSON")
    s.add_argument("--rate-hz", type=float, help="emulate a lower 3D update rate")
    s.add_argument("--timings", action="store_true",
                   help="include wall-clock runtimes in deterministic mode")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("eval", help="pixel error, IoU and update rate against ground truth")
    s.add_argument("--dets", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="EKF rate study on triangulated positions")
    s.add_argument("--obs", required=True)
    s.add_argument("--rates", default="4000,149")
    s.add_argument("--ball", help="BallParams JSON")
    s.add_argument("--em-iters", type=int, default=10)
    s.add_argument("--gt", help="ground-truth JSON for the error reference")
    s.add_argument("--train", help="comma-separated triangulated CSVs to fit the parameters on")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("bench", help="EROS throughput and detection runtimes")
    s.add_argument("--events", required=True)
    s.add_argument("--k-eros", type=int, default=10)
    s.add_argument("--r-range", type=int, nargs=2, default=(3, 20))
    s.add_argument("--repeat", type=int, default=3)
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # one machine-parseable line, no traceback
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
