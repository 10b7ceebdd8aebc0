"""Sum rate versus antennas and transmit power, with and without sensing thresholds.

Runs configs/table2.yaml and configs/table2_loose.yaml on the same drops and
prints the mean sum rates next to the published values.

    python scripts/table2.py --trials 100 --out results/table2
"""

import argparse
from pathlib import Path

from cfisac.config import parse_config
from cfisac.experiment import run_experiment

ROOT = Path(__file__).resolve().parents[1]
PUBLISHED = {(8, 25.0): 26.72, (8, 30.0): 28.90, (16, 25.0): 30.05, (16, 30.0): 32.17}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=None)
    ap.add_argument("--jobs", type=int, default=None)
    ap.add_argument("--out", default="results/table2")
    args = ap.parse_args()

    rows = {}
    for name in ("table2", "table2_loose"):
        spec = parse_config(ROOT / "configs" / f"{name}.yaml")
        outcome = run_experiment(spec, output_dir=Path(args.out) / name,
                                 trials=args.trials, jobs=args.jobs)
        for a in outcome.aggregates:
            key = (a.point["num_antennas"], a.point["p_max"])
            rows.setdefault(key, {})[(name, a.algorithm)] = a

    print(f"{'L':>3} {'p_max':>6} {'published':>9} {'ALMCI':>8} {'outer':>6} "
          f"{'ALMCI(free)':>11} {'ZF':>8} {'MMSE':>8}")
    for key in sorted(rows):
        r = rows[key]
        almci = r[("table2", "ALMCI")]
        print(f"{key[0]:>3} {key[1]:>6g} {PUBLISHED.get(key, float('nan')):>9.2f} "
              f"{almci.mean_sum_rate:>8.2f} {almci.median_outer_iterations:>6g} "
              f"{r[('table2_loose', 'ALMCI')].mean_sum_rate:>11.2f} "
              f"{r[('table2_loose', 'ZF')].mean_sum_rate:>8.2f} "
              f"{r[('table2_loose', 'MMSE')].mean_sum_rate:>8.2f}")


if __name__ == "__main__":
    main()
