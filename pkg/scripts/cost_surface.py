"""Augmented Lagrangian sampled on a plane of tangent directions around a solution.

Solves one drop, then evaluates the cost on retract(X, t1 d1 + t2 d2) over
[-1, 1]^2 with d1, d2 orthonormal random tangent directions. Output columns:
t1, t2, lagrangian.

    python scripts/cost_surface.py --points 41 --out results/surface.csv
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from cfisac.config import parse_config
from cfisac.fp import LiftedProblem
from cfisac.scenario import draw_channels
from cfisac.solver import cost_surface, solve

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "table1.yaml"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--points", type=int, default=41)
    ap.add_argument("--out", default="results/surface.csv")
    args = ap.parse_args()

    cfg = parse_config(args.config).scenario
    ch = draw_channels(cfg, np.random.default_rng(args.seed))
    _, rep = solve(cfg, ch, seed=args.seed, keep_history=False)
    problem = LiftedProblem.build(ch, cfg.gamma_th, cfg.noise_power, cfg.p_max,
                                  per_ap_sensing=cfg.sensing_mode == "per_ap")
    t = np.linspace(-1.0, 1.0, args.points)
    values, _, _ = cost_surface(rep.X, rep.lam, rep.rho, rep.mu, problem, t, t,
                                rng=np.random.default_rng(args.seed))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t1", "t2", "lagrangian"])
        for i, a in enumerate(t):
            for j, b in enumerate(t):
                w.writerow([repr(float(a)), repr(float(b)), repr(float(values[i, j]))])
    c = args.points // 2
    print(f"centre {values[c, c]:.6g}  min {values.min():.6g}  max {values.max():.6g}  -> {out}")


if __name__ == "__main__":
    main()
