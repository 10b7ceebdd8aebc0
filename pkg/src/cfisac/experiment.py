"""Monte Carlo experiment runner and bit-stable artifact export."""

from __future__ import annotations

import itertools
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .baselines import OracleInfeasibleError, baseline_beamformer, grid_search_oracle
from .config import ExperimentSpec, apply_sweep_point, spec_to_dict, watts_to_dbm
from .fp import LiftedProblem, sensing_constraints
from .scenario import beampattern_gains, beampattern_sweep, draw_channels, per_ap_power, sum_rate
from .solver import cost_surface, solve

__all__ = [
    "OUTPUT_ENV",
    "AggregateResult",
    "TrialRecord",
    "resolve_output_dir",
    "run_experiment",
    "trial_seed",
    "angle_grid",
    "write_beampattern_csv",
    "format_float",
    "dump_json",
]

OUTPUT_ENV = "CFISAC_OUT"
ORACLE_RESOLUTION = 64

TRIAL_COLUMNS = ("point", "trial", "seed", "algorithm", "status", "sum_rate", "max_violation",
                 "min_target_gain_dbm", "max_ap_power", "outer_iterations", "alm_iterations",
                 "rcg_iterations", "stalled_runs", "message")


# --------------------------------------------------------------------------
# formatting

def format_float(x) -> str:
    """17 significant digits; empty for None, ``nan``/``inf`` spelled out."""
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _json(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_json(str(k), indent, level + 1)}: {_json(v, indent, level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + _json(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return {True: "true", False: "false", None: "null"}[obj]
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        import json
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dump_json(obj) -> str:
    """Deterministic JSON: insertion key order, 17-digit floats, non-finite floats as null."""
    return _json(obj, 2, 0) + "\n"


def _write_csv(path: Path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_float(v) if isinstance(v, (float, np.floating)) else
                              ("" if v is None else str(v)) for v in row))
    path.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


# --------------------------------------------------------------------------
# records

@dataclass
class TrialRecord:
    point: int
    trial: int
    seed: int
    algorithm: str
    status: str = "ok"                  # ok | infeasible | error
    sum_rate: float = float("nan")
    max_violation: Optional[float] = None
    min_target_gain_dbm: Optional[float] = None
    max_ap_power: float = float("nan")
    outer_iterations: Optional[int] = None
    alm_iterations: Optional[int] = None
    rcg_iterations: Optional[int] = None
    stalled_runs: Optional[int] = None
    message: str = ""
    wall_time: float = 0.0              # reported in text only; never in CSV/JSON

    def row(self):
        return [getattr(self, c) for c in TRIAL_COLUMNS]


@dataclass
class AggregateResult:
    """Per sweep point and algorithm statistics over successful trials."""

    point: dict
    algorithm: str
    trials: int
    succeeded: int
    failed: int
    infeasible: int
    mean_sum_rate: float
    std_sum_rate: float
    mean_outer_iterations: Optional[float] = None
    median_outer_iterations: Optional[float] = None
    mean_alm_iterations: Optional[float] = None
    mean_rcg_iterations: Optional[float] = None
    mean_violation: Optional[float] = None
    max_violation: Optional[float] = None
    mean_wall_time: float = 0.0

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.pop("mean_wall_time")
        return d


@dataclass
class ExperimentOutcome:
    spec: ExperimentSpec
    output_dir: Path
    records: list
    aggregates: list
    files: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def any_infeasible(self) -> bool:
        return any(r.status == "infeasible" for r in self.records)


# --------------------------------------------------------------------------
# helpers

def trial_seed(base_seed: int, t: int) -> int:
    return int(base_seed) ^ int(t)


def angle_grid(step: float) -> np.ndarray:
    """Angles -90..90 degrees inclusive; ``step`` must divide 180."""
    if not step > 0:
        raise ValueError("angle step must be positive")
    count = 180.0 / step
    if abs(count - round(count)) > 1e-9:
        raise ValueError(f"angle step {step} does not divide 180 degrees evenly")
    return np.linspace(-90.0, 90.0, int(round(count)) + 1)


def resolve_output_dir(spec: ExperimentSpec, override=None) -> Path:
    """``override`` (CLI), else the environment variable, else the config value."""
    if override is not None:
        return Path(override)
    env = os.environ.get(OUTPUT_ENV)
    return Path(env) if env else Path(spec.output_dir)


def _check_writable(path: Path):
    path.mkdir(parents=True, exist_ok=True)
    probe = path / ".write-probe"
    with open(probe, "wb") as fh:
        fh.write(b"")
    probe.unlink()


def sweep_points(spec: ExperimentSpec):
    """Cartesian product of sweep axes as tuples of ``(axis, value)``; one empty point if no sweep."""
    if not spec.sweep:
        return [()]
    axes = [axis for axis, _ in spec.sweep]
    return [tuple(zip(axes, combo)) for combo in itertools.product(*[v for _, v in spec.sweep])]


def _point_label(point) -> str:
    return "_".join(f"{axis}{format_float(v)}" for axis, v in point)


def _point_dict(point) -> dict:
    return {axis: v for axis, v in point}


def _physical_violation(V, channels, config):
    """max_n (Gamma_n - gain)_+ in watts, and the smallest target gain in dBm."""
    if channels.num_targets == 0:
        return 0.0, None
    if config.sensing_mode == "per_ap":
        gains = np.stack([beampattern_sweep(V, channels.num_users, channels.theta[m])[:, m]
                          for m in range(channels.num_aps)])
        short = config.gamma_th[None, :] - gains
    else:
        gains = beampattern_gains(V, channels)
        short = config.gamma_th - gains
    return float(np.max(np.maximum(short, 0.0))), watts_to_dbm(float(np.min(gains)))


def _solve_one(alg, cfg, channels, seed, keep=False):
    rec = {}
    if alg == "ALMCI":
        V, rep = solve(cfg, channels, seed=seed, keep_history=False)
        rec.update(outer_iterations=rep.outer_iterations, alm_iterations=rep.alm_iterations,
                   rcg_iterations=rep.rcg_iterations, stalled_runs=rep.stalled_runs)
        status = "infeasible" if rep.infeasible else "ok"
        extra = rep
    elif alg == "ORACLE":
        V, _ = grid_search_oracle(cfg, channels, ORACLE_RESOLUTION)
        status, extra = "ok", None
    else:
        V = baseline_beamformer(alg, channels, cfg)
        status, extra = "ok", None
    rec["sum_rate"] = sum_rate(V, channels, cfg.noise_power)
    rec["max_ap_power"] = max(per_ap_power(V, m) for m in range(cfg.num_aps))
    if alg in ("ALMCI", "ORACLE"):
        rec["max_violation"], rec["min_target_gain_dbm"] = _physical_violation(V, channels, cfg)
    return status, rec, (V, extra) if keep else None


def _run_trial(task):
    """One channel drop, every algorithm on it. Top-level so worker processes can import it."""
    pi, t, seed, cfg, algorithms, keep = task
    channels = draw_channels(cfg, np.random.default_rng(seed))
    out = []
    for alg in algorithms:
        rec = TrialRecord(point=pi, trial=t, seed=seed, algorithm=alg)
        start = time.perf_counter()
        kept = None
        try:
            status, fields, kept = _solve_one(alg, cfg, channels, seed, keep)
            rec.status = status
            for k, v in fields.items():
                setattr(rec, k, v)
        except (OracleInfeasibleError, ArithmeticError, ValueError) as exc:
            rec.status = "infeasible" if isinstance(exc, OracleInfeasibleError) else "error"
            rec.message = f"{type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")
        rec.wall_time = time.perf_counter() - start
        out.append((rec, kept))
    return out, channels if keep else None


def _aggregate(point, alg, recs):
    ok = [r for r in recs if r.status == "ok"]
    rates = [r.sum_rate for r in ok]
    agg = AggregateResult(
        point=_point_dict(point), algorithm=alg, trials=len(recs), succeeded=len(ok),
        failed=sum(r.status == "error" for r in recs),
        infeasible=sum(r.status == "infeasible" for r in recs),
        mean_sum_rate=statistics.fmean(rates) if rates else float("nan"),
        std_sum_rate=statistics.pstdev(rates) if len(rates) > 1 else 0.0,
        mean_wall_time=statistics.fmean(r.wall_time for r in recs) if recs else 0.0,
    )
    if alg == "ALMCI" and ok:
        outer = [r.outer_iterations for r in ok]
        agg.mean_outer_iterations = statistics.fmean(outer)
        agg.median_outer_iterations = float(statistics.median(outer))
        agg.mean_alm_iterations = statistics.fmean(r.alm_iterations for r in ok)
        agg.mean_rcg_iterations = statistics.fmean(r.rcg_iterations for r in ok)
    viol = [r.max_violation for r in ok if r.max_violation is not None]
    if viol:
        agg.mean_violation = statistics.fmean(viol)
        agg.max_violation = max(viol)
    return agg


# --------------------------------------------------------------------------
# artifacts

def write_beampattern_csv(path: Path, V, num_users: int, angle_step: float):
    """Columns ``angle_deg, gain_dBm_ap1, ...``; per-AP gain ``sum_k |a^H v_mk|^2`` in dBm."""
    angles = angle_grid(angle_step)
    gains = beampattern_sweep(V, num_users, np.deg2rad(angles))
    with np.errstate(divide="ignore"):
        dbm = 10.0 * np.log10(gains) + 30.0
    header = ["angle_deg"] + [f"gain_dBm_ap{m + 1}" for m in range(gains.shape[1])]
    rows = [[float(a)] + [float(x) for x in dbm[i]] for i, a in enumerate(angles)]
    _write_csv(path, header, rows)


def _write_surface_csv(path: Path, cfg, channels, report, points: int):
    problem = LiftedProblem.build(channels, cfg.gamma_th, cfg.noise_power, cfg.p_max,
                                  per_ap_sensing=cfg.sensing_mode == "per_ap")
    t = np.linspace(-1.0, 1.0, points)
    values, _, _ = cost_surface(report.X, report.lam, report.rho, report.mu, problem, t, t,
                                rng=np.random.default_rng(cfg.rng_seed))
    rows = [[float(a), float(b), float(values[i, j])]
            for i, a in enumerate(t) for j, b in enumerate(t)]
    _write_csv(path, ["t1", "t2", "lagrangian"], rows)


def _report_text(outcome: ExperimentOutcome) -> str:
    lines = [f"trials per point: {outcome.spec.num_trials}",
             f"algorithms: {', '.join(outcome.spec.algorithms)}",
             f"total wall time: {outcome.wall_time:.2f} s", ""]
    for a in outcome.aggregates:
        label = ", ".join(f"{k}={v:g}" for k, v in a.point.items()) or "base"
        line = (f"[{label}] {a.algorithm:6s} mean {a.mean_sum_rate:8.4f} bps/Hz "
                f"(std {a.std_sum_rate:.4f}, n={a.succeeded}/{a.trials}, "
                f"failed {a.failed}, infeasible {a.infeasible}) "
                f"time {a.mean_wall_time:.3f} s/trial")
        if a.median_outer_iterations is not None:
            line += f" outer median {a.median_outer_iterations:g}"
        if a.max_violation is not None:
            line += f" max violation {a.max_violation:.3g} W"
        lines.append(line)
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# driver

def run_experiment(spec: ExperimentSpec, output_dir=None, seed: Optional[int] = None,
                   trials: Optional[int] = None, jobs: Optional[int] = None,
                   algorithms=None, emit=None, angle_step: Optional[float] = None,
                   write: bool = True) -> ExperimentOutcome:
    """Run every algorithm on ``num_trials`` drops per sweep point and write the artifacts.

    Trial ``t`` draws its channels and ALMCI start from ``seed XOR t``.
    Arguments left as ``None`` come from ``spec``.
    """
    start = time.perf_counter()
    scenario = spec.scenario if seed is None else replace(spec.scenario, rng_seed=int(seed))
    spec = replace(spec, scenario=scenario,
                   num_trials=spec.num_trials if trials is None else int(trials),
                   jobs=spec.jobs if jobs is None else int(jobs),
                   algorithms=tuple(algorithms) if algorithms else spec.algorithms,
                   emit=tuple(emit) if emit is not None else spec.emit,
                   angle_step=spec.angle_step if angle_step is None else float(angle_step))
    if "beampattern-csv" in spec.emit:
        angle_grid(spec.angle_step)                  # validate before any solve
    out = resolve_output_dir(spec, output_dir)
    if write:
        _check_writable(out)

    points = sweep_points(spec)
    keep_first = any(k in spec.emit for k in ("beampattern-csv", "surface-csv"))
    tasks = []
    for pi, point in enumerate(points):
        cfg = apply_sweep_point(scenario, point)
        for t in range(spec.num_trials):
            tasks.append((pi, t, trial_seed(scenario.rng_seed, t), cfg, spec.algorithms,
                          keep_first and t == 0))
    if spec.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            results = list(pool.map(_run_trial, tasks, chunksize=1))
    else:
        results = [_run_trial(task) for task in tasks]

    records = [rec for res, _ in results for rec, _ in res]
    aggregates = []
    for pi, point in enumerate(points):
        for alg in spec.algorithms:
            recs = [r for r in records if r.point == pi and r.algorithm == alg]
            aggregates.append(_aggregate(point, alg, recs))
    outcome = ExperimentOutcome(spec=spec, output_dir=out, records=records, aggregates=aggregates)

    if write:
        for (res, channels), task in zip(results, tasks):
            pi, t = task[0], task[1]
            if channels is None:
                continue
            cfg = task[3]
            suffix = ("_" + _point_label(points[pi])) if points[pi] else ""
            for rec, kept in res:
                if kept is None:
                    continue
                V, rep = kept
                if "beampattern-csv" in spec.emit:
                    path = out / f"beampattern_{rec.algorithm}{suffix}.csv"
                    write_beampattern_csv(path, V, cfg.num_users, spec.angle_step)
                    outcome.files.append(path)
                if "surface-csv" in spec.emit and rec.algorithm == "ALMCI" and rep is not None:
                    path = out / f"surface{suffix}.csv"
                    _write_surface_csv(path, cfg, channels, rep, spec.surface_points)
                    outcome.files.append(path)
        if "trials-csv" in spec.emit:
            path = out / "trials.csv"
            _write_csv(path, TRIAL_COLUMNS, [r.row() for r in records])
            outcome.files.append(path)
        if "summary-json" in spec.emit:
            path = out / "summary.json"
            summary = {"config": spec_to_dict(spec),
                       "base_seed": scenario.rng_seed,
                       "results": [a.to_dict() for a in aggregates]}
            path.write_bytes(dump_json(summary).encode("utf-8"))
            outcome.files.append(path)
    outcome.wall_time = time.perf_counter() - start
    if write and "report-text" in spec.emit:
        path = out / "report.txt"
        path.write_bytes(_report_text(outcome).encode("utf-8"))
        outcome.files.append(path)
    return outcome
