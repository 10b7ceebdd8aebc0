import csv
import json

import numpy as np
import pytest

from cfisac.cli import main
from cfisac.config import load_config_text, parse_config
from cfisac.experiment import (OUTPUT_ENV, angle_grid, dump_json, format_float,
                               resolve_output_dir, run_experiment, trial_seed)

SMALL = """\
scenario:
  num_aps: 2
  num_antennas: 4
  num_users: 2
  num_targets: 2
  p_max: 30 dBm
  noise_power: -80 dBm
  sensing_threshold: {threshold}
  seed: 11
experiment:
  algorithms: {algorithms}
  trials: 2
  output_dir: {out}
  emit: [summary-json, trials-csv, report-text, beampattern-csv]
"""


def write_config(tmp_path, name="small.yaml", threshold="10 dBm",
                 algorithms="[ALMCI, ZF, MMSE]", out=None):
    path = tmp_path / name
    path.write_text(SMALL.format(threshold=threshold, algorithms=algorithms,
                                 out=out or str(tmp_path / "default_out")))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_trial_seed_is_xor():
    assert [trial_seed(6, t) for t in range(4)] == [6, 7, 4, 5]


def test_angle_grid():
    assert angle_grid(1).size == 181
    assert angle_grid(0.5)[[0, -1]].tolist() == [-90.0, 90.0]
    with pytest.raises(ValueError):
        angle_grid(7)


def test_float_formatting_round_trips():
    for x in (0.1, 1 / 3, 26.72, 1e-300, -2.5e17):
        assert float(format_float(x)) == x
    assert dump_json({"b": float("nan"), "a": [1, 0.1]}) == \
        '{\n  "b": null,\n  "a": [\n    1,\n    0.10000000000000001\n  ]\n}\n'


def test_runs_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    spec = parse_config(cfg)
    a, b = tmp_path / "a", tmp_path / "b"
    run_experiment(spec, output_dir=a)
    run_experiment(spec, output_dir=b)
    for name in ("trials.csv", "summary.json", "beampattern_ALMCI.csv", "beampattern_ZF.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert b"\r\n" not in (a / "trials.csv").read_bytes()


def test_trials_csv_layout(tmp_path):
    spec = parse_config(write_config(tmp_path))
    out = run_experiment(spec, output_dir=tmp_path / "o")
    rows = read_rows(tmp_path / "o" / "trials.csv")
    assert len(rows) == 2 * 3 + 1
    header = rows[0]
    assert header[:4] == ["point", "trial", "seed", "algorithm"]
    viol = header.index("max_violation")
    for r in rows[1:]:
        # only ALMCI evaluates sensing constraints
        assert (r[viol] != "") == (r[3] == "ALMCI")
    assert [r[2] for r in rows[1::3]] == ["11", "10"]
    assert not out.any_infeasible


def test_summary_echoes_resolved_config(tmp_path):
    spec = parse_config(write_config(tmp_path))
    run_experiment(spec, output_dir=tmp_path / "o")
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["config"]["scenario"]["solver"]["rho_growth"] == 4.0
    assert "solver.inner_tol" in summary["config"]["defaults_applied"]
    assert summary["base_seed"] == 11
    algs = [r["algorithm"] for r in summary["results"]]
    assert algs == ["ALMCI", "ZF", "MMSE"]
    assert all(np.isfinite(r["mean_sum_rate"]) for r in summary["results"])
    assert all(r["std_sum_rate"] >= 0 for r in summary["results"])


def test_beampattern_csv_layout(tmp_path):
    spec = parse_config(write_config(tmp_path))
    run_experiment(spec, output_dir=tmp_path / "o", trials=1, algorithms=["ZF"],
                   emit=["beampattern-csv"], angle_step=1)
    rows = read_rows(tmp_path / "o" / "beampattern_ZF.csv")
    assert rows[0] == ["angle_deg", "gain_dBm_ap1", "gain_dBm_ap2"]
    assert len(rows) == 182
    assert float(rows[1][0]) == -90.0 and float(rows[-1][0]) == 90.0


def test_zf_beampattern_ignores_sensing_settings(tmp_path):
    files = []
    for i, threshold in enumerate(("0 dBm", "25 dBm")):
        spec = parse_config(write_config(tmp_path, f"c{i}.yaml", threshold=threshold))
        out = tmp_path / f"o{i}"
        run_experiment(spec, output_dir=out, trials=1, algorithms=["ZF"], emit=["beampattern-csv"])
        files.append((out / "beampattern_ZF.csv").read_bytes())
    assert files[0] == files[1]


def test_bad_angle_step_fails_before_solving(tmp_path):
    spec = parse_config(write_config(tmp_path))
    with pytest.raises(ValueError, match="divide"):
        run_experiment(spec, output_dir=tmp_path / "o", emit=["beampattern-csv"], angle_step=7)
    assert not (tmp_path / "o").exists()


def test_unwritable_output_fails_before_solving(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    spec = parse_config(write_config(tmp_path))
    with pytest.raises(OSError):
        run_experiment(spec, output_dir=blocker / "sub")


def test_output_dir_precedence(tmp_path, monkeypatch):
    spec = parse_config(write_config(tmp_path, out="from_config"))
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    assert str(resolve_output_dir(spec)) == "from_config"
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert resolve_output_dir(spec) == tmp_path / "env"
    assert resolve_output_dir(spec, tmp_path / "cli") == tmp_path / "cli"


def test_env_var_redirects_artifacts(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    cfg = write_config(tmp_path, algorithms="[ZF]")
    assert main(["run", str(cfg)]) == 0
    assert (tmp_path / "env" / "trials.csv").exists()


def test_sweep_points_and_ordering(tmp_path):
    text = SMALL.format(threshold="-inf dBm", algorithms="[ZF]", out=tmp_path) + \
        "  sweep:\n    L: [4, 6]\n    p_max: [20, 30]\n"
    spec = load_config_text(text)
    out = run_experiment(spec, write=False)
    points = [a.point for a in out.aggregates]
    assert points == [{"num_antennas": 4, "p_max": 20.0}, {"num_antennas": 4, "p_max": 30.0},
                      {"num_antennas": 6, "p_max": 20.0}, {"num_antennas": 6, "p_max": 30.0}]
    assert [r.trial for r in out.records] == [0, 1] * 4


def test_parallel_run_matches_serial(tmp_path):
    spec = parse_config(write_config(tmp_path))
    run_experiment(spec, output_dir=tmp_path / "s", jobs=1)
    run_experiment(spec, output_dir=tmp_path / "p", jobs=2)
    for name in ("trials.csv", "summary.json"):
        assert (tmp_path / "s" / name).read_bytes() == (tmp_path / "p" / name).read_bytes()


# -- command line --------------------------------------------------------------

def test_cli_unknown_subcommand(capsys):
    assert main(["frobnicate", "x.yaml"]) == 2
    assert "usage" in capsys.readouterr().err


def test_cli_missing_config_is_usage_error(tmp_path):
    assert main(["run", str(tmp_path / "nope.yaml")]) == 2


def test_cli_parse_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("scenario:\n  num_aps: 2\n  bogus: 1\n")
    assert main(["run", str(bad)]) == 2
    assert "bogus" in capsys.readouterr().err


def test_cli_run_writes_summary(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["run", str(cfg), "--out", str(tmp_path / "o"), "--trials", "1"]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert "mean_sum_rate" in summary["results"][0]
    assert "mean sum rate" in capsys.readouterr().out


def test_cli_infeasible_exit_code(tmp_path):
    cfg = write_config(tmp_path, threshold="45 dBm", algorithms="[ALMCI]")
    text = cfg.read_text().replace("seed: 11", "seed: 11\nsolver:\n  max_outer_iters: 2")
    cfg.write_text(text)
    assert main(["run", str(cfg), "--out", str(tmp_path / "o"), "--trials", "1"]) == 1


def test_cli_beampattern_step(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["beampattern", str(cfg), "--alg", "MMSE", "--angle-step", "7",
                 "--out", str(tmp_path / "o")]) == 2
    assert main(["beampattern", str(cfg), "--alg", "MMSE", "--angle-step", "2",
                 "--out", str(tmp_path / "o")]) == 0
    assert len(read_rows(tmp_path / "o" / "beampattern_MMSE.csv")) == 92


def test_cli_beampattern_requires_algorithm(tmp_path):
    assert main(["beampattern", str(write_config(tmp_path))]) == 2


def test_cli_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", str(write_config(tmp_path)), "--out", str(blocker / "x")]) == 2


def test_cli_gradcheck(tmp_path, capsys):
    assert main(["gradcheck", str(write_config(tmp_path)), "--trials", "3"]) == 0
    last = capsys.readouterr().out.strip().splitlines()[-1]
    assert last.startswith("max relative error")
    assert float(last.split()[-1]) <= 1e-6


def test_cli_oracle_refuses_large_instance(tmp_path):
    assert main(["oracle", str(write_config(tmp_path)), "--trials", "1"]) == 2
