"""Prediction quality at the full and a reduced 3D update rate.

Samples the simulated flight every 250 us, adds Gaussian position noise and
runs the EKF study at each rate. Prints covariance traces at mid-flight and
the time the one-step prediction error first drops below the threshold.

    python3 scripts/rate_study.py --rates 4000,1000,149 --out study/
"""

import argparse

import numpy as np

from evball.flight import BallParams
from evball.geom import Obs3D
from evball.pipeline import run_prediction_study, write_study
from evball.simcam import SimConfig, sim_trajectory


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rates", default="4000,149")
    p.add_argument("--noise-mm", type=float, default=5.0)
    p.add_argument("--step-us", type=int, default=250)
    p.add_argument("--em-iters", type=int, default=10)
    p.add_argument("--threshold-mm", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=9)
    p.add_argument("--out", help="directory for prediction/error/params files")
    args = p.parse_args(argv)

    traj = sim_trajectory(SimConfig())
    rng = np.random.default_rng(args.seed)
    ts = np.arange(0, int(traj.t[-1]) + 1, args.step_us * 1000)
    z = traj.position_at(ts) + rng.normal(0, args.noise_mm * 1e-3, (len(ts), 3))
    obs = [Obs3D(q, int(t), 0.0) for t, q in zip(ts, z)]
    rates = [float(r) for r in args.rates.split(",") if r.strip()]
    study = run_prediction_study(obs, rates, BallParams(), em_iters=args.em_iters,
                                 reference=traj.position_at)

    mid = int(ts[len(ts) // 2])
    print(f"{'rate Hz':>8}{'n':>6}{'pos tr':>11}{'vel tr':>11}{'spin tr':>11}{'first ok ms':>13}")
    for rate, s in study.items():
        i = s.at(mid)
        first = s.first_below(args.threshold_mm * 1e-3)
        first = "never" if first is None else f"{first * 1e-6:.2f}"
        print(f"{rate:8.0f}{len(s.t):6d}{s.trace_pos[i]:11.3g}{s.trace_vel[i]:11.3g}"
              f"{s.trace_spin[i]:11.4g}{first:>13}")
    if args.out:
        write_study(study, args.out)


if __name__ == "__main__":
    main()
