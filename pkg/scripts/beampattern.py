"""Beampattern CSVs for ALMCI, ZF and MMSE on the fixed-angle layout.

Writes beampattern_{ALG}.csv (angle_deg, gain_dBm_ap1, gain_dBm_ap2) and
prints each AP's gain at its own target angles.

    python scripts/beampattern.py --out results/beampattern
"""

import argparse
import csv
import math
from pathlib import Path

from cfisac.config import parse_config
from cfisac.experiment import run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "beampattern.yaml"))
    ap.add_argument("--angle-step", type=float, default=1.0)
    ap.add_argument("--out", default="results/beampattern")
    args = ap.parse_args()

    spec = parse_config(args.config)
    out = Path(args.out)
    run_experiment(spec, output_dir=out, trials=1, emit=["beampattern-csv", "summary-json"],
                   angle_step=args.angle_step)
    angles = spec.scenario.target_angles_deg
    threshold = min(spec.scenario.gamma_th)
    print(f"threshold {10 * math.log10(threshold) + 30:.2f} dBm")
    for alg in spec.algorithms:
        with open(out / f"beampattern_{alg}.csv", newline="") as fh:
            table = {float(r[0]): r[1:] for r in list(csv.reader(fh))[1:]}
        for m, row in enumerate(angles):
            gains = ", ".join(f"{a:+g} deg: {float(table[float(a)][m]):6.2f}" for a in row)
            print(f"{alg:6s} AP{m + 1}  {gains}")


if __name__ == "__main__":
    main()
