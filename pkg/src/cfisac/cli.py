"""Command line entry point: ``cfisac {run,sweep,beampattern,gradcheck,oracle} CONFIG``.

Exit codes: 0 success, 1 solver infeasibility (or a failed check), 2 usage,
config or output-path errors.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import manifold as mf
from .baselines import OracleInfeasibleError, OracleRefusedError, grid_search_oracle
from .config import ALGORITHMS, ConfigError, parse_config
from .experiment import angle_grid, run_experiment, trial_seed
from .fp import LiftedProblem
from .scenario import draw_channels, sum_rate
from .solver import gradient_check, solve

EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE = 0, 1, 2

GRADCHECK_TOL = 1e-6
ORACLE_RTOL = 0.02


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cfisac", description="Cell-free ISAC beamforming experiments.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def common(sp, trials_help="number of Monte Carlo trials (overrides the config)"):
        sp.add_argument("config", help="YAML experiment config")
        sp.add_argument("--seed", type=int, help="base seed; trial t uses seed XOR t")
        sp.add_argument("--trials", type=int, help=trials_help)
        sp.add_argument("--out", help="output directory (overrides $CFISAC_OUT and the config)")
        sp.add_argument("--jobs", type=int, help="worker processes")

    sp = sub.add_parser("run", help="run the configured experiment")
    common(sp)
    sp.add_argument("--alg", action="append", choices=ALGORITHMS,
                    help="restrict to this algorithm (repeatable)")
    sp = sub.add_parser("sweep", help="run the configured parameter sweep")
    common(sp)
    sp.add_argument("--alg", action="append", choices=ALGORITHMS)
    sp = sub.add_parser("beampattern", help="emit one algorithm's beampattern CSV")
    common(sp)
    sp.add_argument("--alg", required=True, choices=ALGORITHMS)
    sp.add_argument("--angle-step", type=float, help="angle grid step in degrees (divides 180)")
    sp = sub.add_parser("gradcheck", help="finite-difference check of the Riemannian gradient")
    common(sp, "number of random instances (default 20)")
    sp = sub.add_parser("oracle", help="compare ALMCI against the grid-search oracle")
    common(sp, "number of tiny instances (default 20)")
    sp.add_argument("--resolution", type=int, default=64, help="grid points per dimension")
    return p


def _print_summary(outcome):
    for a in outcome.aggregates:
        label = ", ".join(f"{k}={v:g}" for k, v in a.point.items()) or "base"
        extra = ""
        if a.median_outer_iterations is not None:
            extra = f"  outer iterations (median) {a.median_outer_iterations:g}"
        print(f"[{label}] {a.algorithm:6s} mean sum rate {a.mean_sum_rate:.4f} bps/Hz "
              f"over {a.succeeded}/{a.trials} trials{extra}")
    for path in outcome.files:
        print(f"wrote {path}")


def _cmd_run(args, spec, require_sweep=False):
    if require_sweep and not spec.sweep:
        print("config has no experiment.sweep section", file=sys.stderr)
        return EXIT_USAGE
    outcome = run_experiment(spec, output_dir=args.out, seed=args.seed, trials=args.trials,
                             jobs=args.jobs, algorithms=args.alg)
    _print_summary(outcome)
    return EXIT_INFEASIBLE if outcome.any_infeasible else EXIT_OK


def _cmd_beampattern(args, spec):
    step = spec.angle_step if args.angle_step is None else args.angle_step
    try:
        angle_grid(step)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    outcome = run_experiment(spec, output_dir=args.out, seed=args.seed, trials=1,
                             jobs=1, algorithms=[args.alg], emit=["beampattern-csv"],
                             angle_step=step)
    _print_summary(outcome)
    return EXIT_INFEASIBLE if outcome.any_infeasible else EXIT_OK


def _cmd_gradcheck(args, spec):
    cfg = spec.scenario
    base = cfg.rng_seed if args.seed is None else args.seed
    count = 20 if args.trials is None else args.trials
    worst = 0.0
    for t in range(count):
        rng = np.random.default_rng(trial_seed(base, t))
        channels = draw_channels(cfg, rng)
        problem = LiftedProblem.build(channels, cfg.gamma_th, cfg.noise_power, cfg.p_max,
                                      per_ap_sensing=cfg.sensing_mode == "per_ap")
        X = mf.random_point(problem.shape, rng)
        lam = rng.uniform(0.0, 1.0, problem.num_constraints)
        rho = float(rng.uniform(0.5, 10.0))
        mu = rng.uniform(0.0, 10.0, problem.num_users)
        err = gradient_check(X, lam, rho, mu, problem, rng=rng)
        worst = max(worst, err)
        print(f"instance {t}: max relative error {err:.3e}")
    print(f"max relative error {worst:.3e}")
    return EXIT_OK if worst <= GRADCHECK_TOL else EXIT_INFEASIBLE


def _cmd_oracle(args, spec):
    cfg = spec.scenario
    base = cfg.rng_seed if args.seed is None else args.seed
    count = 20 if args.trials is None else args.trials
    worst, skipped = np.inf, 0
    for t in range(count):
        seed = trial_seed(base, t)
        channels = draw_channels(cfg, np.random.default_rng(seed))
        try:
            _, oracle_rate = grid_search_oracle(cfg, channels, args.resolution)
        except OracleInfeasibleError:
            skipped += 1
            print(f"instance {t}: oracle grid has no feasible point, skipped")
            continue
        V, rep = solve(cfg, channels, seed=seed, keep_history=False)
        rate = sum_rate(V, channels, cfg.noise_power)
        margin = (rate - oracle_rate) / abs(oracle_rate)
        worst = min(worst, margin)
        print(f"instance {t}: ALMCI {rate:.6f}  oracle {oracle_rate:.6f}  "
              f"relative margin {margin:+.3e}  feasible {rep.feasible}")
    if np.isinf(worst):
        print("no instance had a feasible oracle point")
        return EXIT_INFEASIBLE
    print(f"worst relative margin {worst:+.3e} ({skipped} skipped)")
    return EXIT_OK if worst >= -ORACLE_RTOL else EXIT_INFEASIBLE


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    try:
        spec = parse_config(args.config)
        if args.jobs is not None and args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        if args.trials is not None and args.trials < 1:
            raise ConfigError("--trials must be at least 1")
        if args.command == "run":
            return _cmd_run(args, spec)
        if args.command == "sweep":
            return _cmd_run(args, spec, require_sweep=True)
        if args.command == "beampattern":
            return _cmd_beampattern(args, spec)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args, spec)
        return _cmd_oracle(args, spec)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OracleRefusedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
