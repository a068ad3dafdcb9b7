import csv
import json

import pytest

from redpg.cli import main, parse_grid
from redpg.config import PARAM_SCHEMA, parse_config
from redpg.errors import ConfigError

SMALL = """\
version: 1
seed: {seed}
trials: 1
scenario:
  type: random
  agents: 3
  bounds: [[0, 0, 0], [5, 5, 2.5]]
params:
  T: 10
  mpc_horizon: 5
  sigma: {sigma}
"""


def _config(tmp_path, text, name="c.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------- config

def test_negative_dt_names_key_and_line(capsys, tmp_path):
    path = _config(tmp_path, SMALL.format(seed=0, sigma=0.0) + "  dt: -0.2\n")
    assert main(["plan", path, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "dt" in err and "line 12" in err


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="speed") as info:
        parse_config(SMALL.format(seed=0, sigma=0.0) + "  speed: 3\n")
    assert info.value.line == 12


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigError, match="extra"):
        parse_config("version: 1\nextra: 1\nscenario: {type: random}\n")


def test_version_required():
    with pytest.raises(ConfigError, match="version"):
        parse_config("scenario: {type: random}\n")


def test_type_errors_are_reported():
    with pytest.raises(ConfigError, match="T"):
        parse_config(SMALL.format(seed=0, sigma=0.0).replace("T: 10", "T: ten"))
    with pytest.raises(ConfigError, match="agents"):
        parse_config(SMALL.format(seed=0, sigma=0.0).replace("agents: 3", "agents: 0"))


def test_cross_field_validation_reported():
    # the proximity radius must cover the closing distance 2 v_max dt
    with pytest.raises(ConfigError, match="d_prox"):
        parse_config(SMALL.format(seed=0, sigma=0.0) + "  d_prox: 0.5\n")


def test_seed_required(capsys, tmp_path):
    path = _config(tmp_path, SMALL.format(seed="null", sigma=0.0))
    assert main(["plan", path, "--out", str(tmp_path / "o")]) == 2
    assert "seed" in capsys.readouterr().err


def test_seed_flag_overrides(tmp_path):
    path = _config(tmp_path, SMALL.format(seed="null", sigma=0.0))
    assert main(["plan", path, "--seed", "4", "--out", str(tmp_path / "o")]) == 0
    assert all(r[0] == "4" for r in _rows(tmp_path / "o" / "nominal.csv")[1:])


def test_every_param_has_unit():
    for key, (_, unit, desc) in PARAM_SCHEMA.items():
        assert unit and desc, key


def test_schema_subcommand(capsys):
    assert main(["schema"]) == 0
    out = capsys.readouterr().out
    assert "dt [s]" in out and "lambda_frs" in out


def test_explicit_and_intersection_configs():
    cfg = parse_config("""\
version: 1
scenario:
  type: explicit
  agents:
    - {model: double_integrator_2d, start: [0, 0], goal: [2, 0]}
    - {model: double_integrator_2d, start: [0, 3], goal: [2, 3]}
params: {T: 10, mpc_horizon: 5}
""")
    sc = cfg.template(0)
    assert sc.n_agents == 2 and sc.T == 10
    cfg = parse_config("version: 1\nscenario: {type: intersection, variant: 2}\n")
    assert cfg.template(0).n_agents == 4


# ------------------------------------------------------------------ plan

def test_plan_rows_and_determinism(tmp_path):
    path = _config(tmp_path, SMALL.format(seed=1, sigma=0.02))
    assert main(["plan", path, "--out", str(tmp_path / "a")]) == 0
    assert main(["plan", path, "--out", str(tmp_path / "b")]) == 0
    rows = _rows(tmp_path / "a" / "nominal.csv")
    assert rows[0][:3] == ["trial", "t", "agent"]
    assert len(rows) - 1 == 3 * (10 + 1)
    for name in ("nominal.csv", "certificates.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    report = json.loads((tmp_path / "a" / "certificates.json").read_text())
    assert len(report["certificates"]) == 10
    assert report["calibrated_eta"]


# -------------------------------------------------------------- simulate

def test_simulate_report_and_zero_sigma(capsys, tmp_path):
    path = _config(tmp_path, SMALL.format(seed=2, sigma=0.0))
    assert main(["simulate", path, "--out", str(tmp_path / "o")]) == 0
    report = json.loads((tmp_path / "o" / "metrics.json").read_text())
    fields = {"tracking_cost", "dist_to_goal_at_Tm5", "collision_ratio", "min_pairwise_distance",
              "near_collision_count", "avg_neighbors", "ne_iterations"}
    assert fields <= set(report["mean"])
    assert fields <= set(report["per_trial"][0])
    assert report["failed_count"] == 0
    nominal = _rows(tmp_path / "o" / "nominal.csv")
    executed = _rows(tmp_path / "o" / "executed.csv")
    assert nominal == executed
    assert json.loads(capsys.readouterr().out) == report


def test_simulate_rejects_zero_trials(tmp_path):
    path = _config(tmp_path, SMALL.format(seed=2, sigma=0.0))
    assert main(["simulate", path, "--trials", "0", "--out", str(tmp_path / "o")]) == 2


# ----------------------------------------------------------------- sweep

def test_parse_grid():
    assert parse_grid(["lambda_frs=1,5,10"]) == {"lambda_frs": [1, 5, 10]}
    with pytest.raises(Exception):
        parse_grid([])
    with pytest.raises(Exception):
        parse_grid(["lambda_frs="])


def test_empty_grid_is_usage_error(capsys, tmp_path):
    path = _config(tmp_path, SMALL.format(seed=0, sigma=0.0))
    assert main(["sweep", path, "--out", str(tmp_path / "o")]) == 2
    assert "grid" in capsys.readouterr().err
    assert main(["sweep", path, "lambda_frs=", "--out", str(tmp_path / "o")]) == 2


def test_sweep_unknown_parameter(tmp_path):
    path = _config(tmp_path, SMALL.format(seed=0, sigma=0.0))
    assert main(["sweep", path, "bogus=1,2", "--out", str(tmp_path / "o")]) == 2


def test_sweep_without_winner(capsys, tmp_path):
    # two agents parked 0.1 m apart against a 1 m threshold collide at every step
    text = """\
version: 1
seed: 0
scenario:
  type: explicit
  agents:
    - {model: double_integrator_2d, start: [0, 0], goal: [0, 0]}
    - {model: double_integrator_2d, start: [0.1, 0], goal: [0.1, 0]}
params: {T: 6, mpc_horizon: 3, sigma: 0.0}
"""
    path = _config(tmp_path, text)
    assert main(["sweep", path, "d_col=1.0", "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert not any(l.startswith("winner:") for l in out.splitlines())
    assert "no winner" in out
    rows = _rows(tmp_path / "o" / "sweep.csv")
    assert rows[0][0] == "d_col" and len(rows) == 2


def test_sweep_single_cell_winner(capsys, tmp_path):
    path = _config(tmp_path, SMALL.format(seed=0, sigma=0.0))
    assert main(["sweep", path, "lambda_frs=10", "--out", str(tmp_path / "o")]) == 0
    assert "winner: lambda_frs=10" in capsys.readouterr().out


# ------------------------------------------------------------- frs-check

def test_frs_check_zero_sigma(capsys, tmp_path):
    path = _config(tmp_path, SMALL.format(seed=0, sigma=0.0))
    assert main(["frs-check", path, "--samples", "50"]) == 0
    out = capsys.readouterr().out
    assert "containment ratio=1.000000" in out
    assert "calibrated eta=" in out


def test_frs_check_default_sigma(capsys, tmp_path):
    path = _config(tmp_path, "version: 1\nseed: 0\nscenario: {type: random, agents: 2}\n")
    assert main(["frs-check", path, "--samples", "300"]) == 0
    line = next(l for l in capsys.readouterr().out.splitlines() if "containment ratio" in l)
    ratio = float(line.split("containment ratio=")[1].split()[0])
    assert ratio >= 0.99
