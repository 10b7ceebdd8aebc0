"""Configuration types, unit conversion and the strict YAML config parser."""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import yaml

__all__ = [
    "ConfigError",
    "SolverOptions",
    "ScenarioConfig",
    "ExperimentSpec",
    "dbm_to_watts",
    "watts_to_dbm",
    "db_to_linear",
    "parse_config",
    "load_config_text",
    "ALGORITHMS",
    "EMIT_KINDS",
]

ALGORITHMS = ("ALMCI", "ZF", "MMSE", "ORACLE")
SENSING_MODES = ("joint", "per_ap")
EMIT_KINDS = ("summary-json", "trials-csv", "beampattern-csv", "surface-csv", "report-text")
SWEEP_AXES = {"L": "num_antennas", "num_antennas": "num_antennas",
              "K": "num_users", "num_users": "num_users",
              "p_max": "p_max"}


class ConfigError(ValueError):
    """Raised for malformed configuration files; carries the offending line when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def dbm_to_watts(x: float) -> float:
    return 10.0 ** ((x - 30.0) / 10.0)


def watts_to_dbm(w: float) -> float:
    if w <= 0:
        return -math.inf
    return 10.0 * math.log10(w) + 30.0


def db_to_linear(x: float) -> float:
    return 10.0 ** (x / 10.0)


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances, schedules and caps for the ALMCI solver.

    Defaults follow the simulation parameter table, except ``rho_growth``
    which is the reciprocal of the tabulated 0.25 (the penalty must grow).
    """

    inner_tol: float = 1e-6          # gradient-norm tolerance of the RCG loop
    outer_tol: float = 1e-6          # objective-change tolerance of the FP loop
    eps0: float = 1e-3
    eps_min: float = 1e-6
    eps_shrink: float = 0.5
    rho0: float = 1.0
    rho_growth: float = 4.0
    tau: float = 0.5
    d_min: float = 1e-10
    lambda_min: float = 0.0
    lambda_max: float = 100.0
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    alpha_init: float = 1.0
    max_backtracks: int = 50
    max_rcg_iters: int = 500
    max_alm_iters: int = 50
    max_outer_iters: int = 30
    reset_alm_per_outer: bool = False
    violation_rtol: float = 1e-4
    kkt_rtol: float = 1e-6           # |sigma| below kkt_rtol * max(Gamma) counts as settled
    infeasible_rho_ratio: float = 1e6
    hs_floor: float = 1e-14
    refine_steps: int = 6            # derivative-guided refinements after an Armijo acceptance
    curvature_c: float = 0.1         # refinement stops once |slope| drops by this factor

    def __post_init__(self):
        if not 0 < self.eps_shrink < 1:
            raise ConfigError("eps_shrink must lie in (0, 1)")
        if not self.rho_growth > 1:
            raise ConfigError("rho_growth must exceed 1")
        if not 0 < self.tau < 1:
            raise ConfigError("tau must lie in (0, 1)")
        if self.lambda_min > self.lambda_max:
            raise ConfigError("lambda_min must not exceed lambda_max")
        for name in ("inner_tol", "outer_tol", "eps0", "eps_min", "rho0", "d_min",
                     "armijo_c", "alpha_init", "violation_rtol", "kkt_rtol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.armijo_shrink < 1:
            raise ConfigError("armijo_shrink must lie in (0, 1)")
        if not 0 < self.curvature_c < 1:
            raise ConfigError("curvature_c must lie in (0, 1)")
        if self.refine_steps < 0:
            raise ConfigError("refine_steps must be nonnegative")
        for name in ("max_backtracks", "max_rcg_iters", "max_alm_iters", "max_outer_iters"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")


@dataclass(frozen=True)
class ScenarioConfig:
    """One network layout and its physical parameters, all in linear units.

    Positions left as ``None`` are drawn uniformly over ``area`` x ``area``
    metres on every channel drop. ``target_angles_deg`` (shape M x N, per-AP
    angles) overrides ``target_positions``.
    """

    num_aps: int = 2
    num_antennas: int = 16
    num_users: int = 2
    num_targets: int = 4
    p_max: float = 1.0                       # W
    noise_power: float = 1e-11               # W
    sensing_thresholds: tuple = (0.1,) * 4   # W, one per target
    pathloss_ref: float = 1e-3               # linear
    ref_distance: float = 1.0                # m
    pathloss_exponent: float = 2.0
    area: float = 500.0                      # m, side of the square deployment area
    ap_positions: Optional[tuple] = ((10.0, 10.0), (80.0, 80.0))
    user_positions: Optional[tuple] = None
    target_positions: Optional[tuple] = None
    target_angles_deg: Optional[tuple] = None
    user_angles_deg: Optional[tuple] = None  # M x K; line-of-sight user channels when set
    sensing_mode: str = "joint"              # "joint": APs add up; "per_ap": each AP alone
    rng_seed: int = 0
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.num_aps < 1 or self.num_antennas < 1 or self.num_users < 1:
            raise ConfigError("num_aps, num_antennas and num_users must be at least 1")
        if self.num_targets < 0:
            raise ConfigError("num_targets must be nonnegative")
        if not self.p_max > 0:
            raise ConfigError("p_max must be positive")
        if not self.noise_power > 0:
            raise ConfigError("noise_power must be positive")
        if len(self.sensing_thresholds) != self.num_targets:
            raise ConfigError(
                f"expected {self.num_targets} sensing thresholds, got {len(self.sensing_thresholds)}")
        if any(not g >= 0 for g in self.sensing_thresholds):
            raise ConfigError("sensing thresholds must be nonnegative watts")
        if not self.ref_distance > 0:
            raise ConfigError("ref_distance must be positive")
        if self.ap_positions is not None and len(self.ap_positions) != self.num_aps:
            raise ConfigError(f"expected {self.num_aps} AP positions, got {len(self.ap_positions)}")
        if self.user_positions is not None and len(self.user_positions) != self.num_users:
            raise ConfigError(
                f"expected {self.num_users} user positions, got {len(self.user_positions)}")
        if self.target_positions is not None and len(self.target_positions) != self.num_targets:
            raise ConfigError(
                f"expected {self.num_targets} target positions, got {len(self.target_positions)}")
        if self.target_angles_deg is not None:
            rows = self.target_angles_deg
            if len(rows) != self.num_aps or any(len(r) != self.num_targets for r in rows):
                raise ConfigError(
                    f"target_angles_deg must be {self.num_aps} rows of {self.num_targets} angles")
        if self.sensing_mode not in SENSING_MODES:
            raise ConfigError(f"sensing_mode must be one of {', '.join(SENSING_MODES)}")
        if self.user_angles_deg is not None:
            rows = self.user_angles_deg
            if len(rows) != self.num_aps or any(len(r) != self.num_users for r in rows):
                raise ConfigError(
                    f"user_angles_deg must be {self.num_aps} rows of {self.num_users} angles")

    @property
    def gamma_th(self):
        import numpy as np
        return np.asarray(self.sensing_thresholds, dtype=float)

    def replace(self, **changes) -> "ScenarioConfig":
        """Copy with ``changes``; a changed target count resizes thresholds if they were uniform."""
        n = changes.get("num_targets", self.num_targets)
        if "sensing_thresholds" not in changes and n != self.num_targets:
            uniq = set(self.sensing_thresholds)
            if len(uniq) > 1:
                raise ConfigError("cannot resize non-uniform sensing thresholds")
            value = uniq.pop() if uniq else 0.1
            changes["sensing_thresholds"] = (value,) * n
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: ScenarioConfig
    algorithms: tuple = ("ALMCI", "ZF", "MMSE")
    num_trials: int = 100
    sweep: tuple = ()                       # ((axis, (v1, v2, ...)), ...); p_max values in dBm
    output_dir: str = "results"
    emit: tuple = ("summary-json", "trials-csv", "report-text")
    angle_step: float = 1.0
    jobs: int = 1
    surface_points: int = 21
    defaults_applied: tuple = ()            # dotted names of fields filled from defaults

    def __post_init__(self):
        if self.num_trials < 1:
            raise ConfigError("trials must be at least 1")
        for alg in self.algorithms:
            if alg not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {alg!r}")
        for kind in self.emit:
            if kind not in EMIT_KINDS:
                raise ConfigError(f"unknown emit kind {kind!r}")
        for axis, values in self.sweep:
            if axis not in ("num_antennas", "num_users", "p_max"):
                raise ConfigError(f"unknown sweep axis {axis!r}")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ConfigError(f"sweep values for {axis} must be strictly increasing")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")


# --------------------------------------------------------------------------
# parsing

_QUANTITY = re.compile(r"^\s*([-+]?(?:inf|\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?))\s*([A-Za-z]*)\s*$")

_SCENARIO_KEYS = {
    "num_aps", "num_antennas", "num_users", "num_targets", "p_max", "noise_power",
    "sensing_threshold", "pathloss_ref", "ref_distance", "pathloss_exponent", "area",
    "ap_positions", "user_positions", "target_positions", "target_angles_deg",
    "user_angles_deg", "sensing_mode", "seed",
}
_EXPERIMENT_KEYS = {"algorithms", "trials", "sweep", "output_dir", "emit", "angle_step",
                    "jobs", "surface_points"}
_SOLVER_FIELDS = {f.name: f for f in dataclasses.fields(SolverOptions)}


def _quantity(value: Any, unit: str, line: Optional[int], name: str) -> float:
    """Parse ``30``, ``"30 dBm"``, ``"1 W"`` or ``"-30 dB"`` into watts/linear."""
    if isinstance(value, bool):
        raise ConfigError(f"{name}: expected a number, got {value!r}", line)
    if isinstance(value, (int, float)):
        number, given = float(value), ""
    elif isinstance(value, str):
        m = _QUANTITY.match(value)
        if not m:
            raise ConfigError(f"{name}: cannot parse quantity {value!r}", line)
        number, given = float(m.group(1)), m.group(2)
    else:
        raise ConfigError(f"{name}: expected a number, got {value!r}", line)
    given = given or unit
    if unit == "dBm":
        if given == "dBm":
            return dbm_to_watts(number)
        if given == "W":
            return number
        if given == "mW":
            return number * 1e-3
    elif unit == "dB":
        if given == "dB":
            return db_to_linear(number)
        if given in ("lin", "linear"):
            return number
    raise ConfigError(f"{name}: unit {given!r} not accepted here", line)


class _Lines:
    """Maps dotted key paths to 1-based source lines."""

    def __init__(self, text: str):
        self.lines: dict = {}
        try:
            node = yaml.compose(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ConfigError(f"invalid YAML: {exc}", mark.line + 1 if mark else None) from exc
        if node is not None:
            self._walk(node, "")

    def _walk(self, node, prefix):
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                path = f"{prefix}.{key.value}" if prefix else str(key.value)
                self.lines[path] = key.start_mark.line + 1
                self._walk(value, path)

    def __call__(self, path: str) -> Optional[int]:
        return self.lines.get(path)


def _int(value, line, name) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name}: expected an integer, got {value!r}", line)
    return value


def _number(value, line, name) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name}: expected a number, got {value!r}", line)
    return float(value)


def _points(value, line, name, ncols=2) -> tuple:
    if not isinstance(value, list) or not all(
            isinstance(p, list) and len(p) == ncols for p in value):
        raise ConfigError(f"{name}: expected a list of [x, y] pairs", line)
    return tuple(tuple(_number(x, line, name) for x in p) for p in value)


def _section(data, key, allowed, lines) -> dict:
    sec = data.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section {key!r} must be a mapping", lines(key))
    for k in sec:
        if k not in allowed:
            raise ConfigError(f"unknown key {key}.{k}", lines(f"{key}.{k}"))
    return sec


def load_config_text(text: str) -> ExperimentSpec:
    """Strictly parse YAML config text; see README for the schema."""
    lines = _Lines(text)
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1)
    for k in data:
        if k not in ("scenario", "solver", "experiment"):
            raise ConfigError(f"unknown key {k}", lines(k))
    if "scenario" not in data:
        raise ConfigError("missing required section 'scenario'")

    sc = _section(data, "scenario", _SCENARIO_KEYS, lines)
    so = _section(data, "solver", set(_SOLVER_FIELDS), lines)
    ex = _section(data, "experiment", _EXPERIMENT_KEYS, lines)
    defaults = []

    def ln(path):
        return lines(path)

    for req in ("num_aps", "num_antennas", "num_users", "num_targets"):
        if req not in sc:
            raise ConfigError(f"missing required field scenario.{req}", ln("scenario"))
    kw: dict = {}
    for name in ("num_aps", "num_antennas", "num_users", "num_targets"):
        kw[name] = _int(sc[name], ln(f"scenario.{name}"), name)

    base = ScenarioConfig.__dataclass_fields__
    units = {"p_max": "dBm", "noise_power": "dBm", "pathloss_ref": "dB"}
    for name, unit in units.items():
        if name in sc:
            kw[name] = _quantity(sc[name], unit, ln(f"scenario.{name}"), name)
        else:
            defaults.append(f"scenario.{name}")
    for name in ("ref_distance", "pathloss_exponent", "area"):
        if name in sc:
            kw[name] = _number(sc[name], ln(f"scenario.{name}"), name)
        else:
            defaults.append(f"scenario.{name}")

    n = kw["num_targets"]
    if "sensing_threshold" in sc:
        raw = sc["sensing_threshold"]
        line = ln("scenario.sensing_threshold")
        if isinstance(raw, list):
            kw["sensing_thresholds"] = tuple(_quantity(v, "dBm", line, "sensing_threshold")
                                             for v in raw)
        else:
            kw["sensing_thresholds"] = (_quantity(raw, "dBm", line, "sensing_threshold"),) * n
    else:
        defaults.append("scenario.sensing_threshold")
        kw["sensing_thresholds"] = (dbm_to_watts(20.0),) * n

    if "ap_positions" in sc:
        kw["ap_positions"] = (None if sc["ap_positions"] is None else
                              _points(sc["ap_positions"], ln("scenario.ap_positions"), "ap_positions"))
    elif kw["num_aps"] != 2:
        kw["ap_positions"] = None
    else:
        defaults.append("scenario.ap_positions")
    for name in ("user_positions", "target_positions"):
        if sc.get(name) is not None:
            kw[name] = _points(sc[name], ln(f"scenario.{name}"), name)
    for name in ("target_angles_deg", "user_angles_deg"):
        if sc.get(name) is not None:
            raw = sc[name]
            line = ln(f"scenario.{name}")
            if not isinstance(raw, list) or not all(isinstance(r, list) for r in raw):
                raise ConfigError(f"{name}: expected one list of angles per AP", line)
            kw[name] = tuple(tuple(_number(x, line, name) for x in r) for r in raw)
    if "sensing_mode" in sc:
        kw["sensing_mode"] = str(sc["sensing_mode"])
        if kw["sensing_mode"] not in SENSING_MODES:
            raise ConfigError(f"sensing_mode must be one of {', '.join(SENSING_MODES)}",
                              ln("scenario.sensing_mode"))
    else:
        defaults.append("scenario.sensing_mode")
    if "seed" in sc:
        kw["rng_seed"] = _int(sc["seed"], ln("scenario.seed"), "seed")
    else:
        defaults.append("scenario.seed")

    skw = {}
    for name, f in _SOLVER_FIELDS.items():
        if name not in so:
            defaults.append(f"solver.{name}")
            continue
        line = ln(f"solver.{name}")
        if f.type in ("int", int):
            skw[name] = _int(so[name], line, name)
        elif f.type in ("bool", bool):
            if not isinstance(so[name], bool):
                raise ConfigError(f"{name}: expected true/false", line)
            skw[name] = so[name]
        else:
            skw[name] = _number(so[name], line, name)
    try:
        kw["solver"] = SolverOptions(**skw)
        scenario = ScenarioConfig(**kw)
    except ConfigError as exc:
        if exc.line is None:
            raise ConfigError(str(exc), ln("scenario")) from None
        raise

    ekw: dict = {}
    if "algorithms" in ex:
        algs = ex["algorithms"]
        line = ln("experiment.algorithms")
        if not isinstance(algs, list):
            raise ConfigError("algorithms: expected a list", line)
        for a in algs:
            if a not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {a!r}", line)
        ekw["algorithms"] = tuple(algs)
    if "trials" in ex:
        ekw["num_trials"] = _int(ex["trials"], ln("experiment.trials"), "trials")
    if "emit" in ex:
        line = ln("experiment.emit")
        if not isinstance(ex["emit"], list):
            raise ConfigError("emit: expected a list", line)
        for e in ex["emit"]:
            if e not in EMIT_KINDS:
                raise ConfigError(f"unknown emit kind {e!r}", line)
        ekw["emit"] = tuple(ex["emit"])
    if "output_dir" in ex:
        ekw["output_dir"] = str(ex["output_dir"])
    if "angle_step" in ex:
        ekw["angle_step"] = _number(ex["angle_step"], ln("experiment.angle_step"), "angle_step")
    for name in ("jobs", "surface_points"):
        if name in ex:
            ekw[name] = _int(ex[name], ln(f"experiment.{name}"), name)
    if "sweep" in ex:
        raw = ex["sweep"]
        line = ln("experiment.sweep")
        if not isinstance(raw, dict):
            raise ConfigError("sweep: expected a mapping of axis to values", line)
        axes = []
        for axis, values in raw.items():
            aline = ln(f"experiment.sweep.{axis}")
            if axis not in SWEEP_AXES:
                raise ConfigError(f"unknown sweep axis {axis!r}", aline)
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep.{axis}: expected a nonempty list", aline)
            canon = SWEEP_AXES[axis]
            conv = _number if canon == "p_max" else _int
            vals = tuple(conv(v, aline, axis) for v in values)
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ConfigError(f"sweep.{axis}: values must be strictly increasing", aline)
            axes.append((canon, vals))
        ekw["sweep"] = tuple(axes)
    for name in ("algorithms", "trials", "emit", "output_dir", "angle_step", "jobs", "sweep"):
        if name not in ex:
            defaults.append(f"experiment.{name}")
    try:
        return ExperimentSpec(scenario=scenario, defaults_applied=tuple(defaults), **ekw)
    except ConfigError as exc:
        raise ConfigError(str(exc), ln("experiment")) from None


def parse_config(path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return load_config_text(text)


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    """Fully-resolved scenario, linear units, for provenance records."""
    d = dataclasses.asdict(cfg)
    d["solver"] = dataclasses.asdict(cfg.solver)
    return d


def spec_to_dict(spec: ExperimentSpec) -> dict:
    return {
        "scenario": scenario_to_dict(spec.scenario),
        "algorithms": list(spec.algorithms),
        "trials": spec.num_trials,
        "sweep": {axis: list(vals) for axis, vals in spec.sweep},
        "emit": list(spec.emit),
        "angle_step": spec.angle_step,
        "defaults_applied": list(spec.defaults_applied),
    }


def apply_sweep_point(cfg: ScenarioConfig, point: Sequence) -> ScenarioConfig:
    """Return ``cfg`` with each ``(axis, value)`` of ``point`` substituted (p_max in dBm)."""
    changes = {}
    for axis, value in point:
        if axis == "p_max":
            changes["p_max"] = dbm_to_watts(value)
        else:
            changes[axis] = int(value)
    if "num_users" in changes and cfg.user_positions is not None:
        raise ConfigError("cannot sweep num_users with explicit user_positions")
    return cfg.replace(**changes)
