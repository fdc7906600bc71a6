import json
import subprocess
import sys

import pytest

from formctl.cli import main
from formctl.scenario import load_scenario

TINY = """\
formation:
  leaders: 2
  positions: [[0, 0, 0], [4, 0, 0], [1, 0, 0]]
  constraints:
    - {agent: 3, neighbors: [1, 2]}
plant: {order: 1}
gains: {zeta: 0.2}
maneuver:
  - t: [0, 1]
    translation: [{poly: [0, 1]}, 0, 0]
sim: {dt: 1.0e-3, leader_error: 0.1, estimate_init: state, follower_error: 0.5, seed: 2}
"""


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.scenario"
    p.write_text(TINY)
    return p


def test_synth_ok(capsys):
    assert main(["synth", "paper_sec5"]) == 0
    out = capsys.readouterr().out
    assert "Omega_hat" in out and "FAIL" not in out and "[ 5]" in out


def test_simulate_writes_csv_and_summary(tiny, tmp_path, capsys):
    out, summ = tmp_path / "t.csv", tmp_path / "s.json"
    assert main(["simulate", str(tiny), "--out", str(out), "--summary", str(summ)]) == 0
    assert out.read_text().startswith("t,agent,role,px")
    data = json.loads(summ.read_text())
    assert data["variant"] == "omega-hat" and len(data["segments"]) == 1


def test_simulate_ladder(tiny, tmp_path, capsys):
    out = tmp_path / "lad.csv"
    assert main(["simulate", str(tiny), "--out", str(out), "--dt-ladder"]) == 0
    for tag in ("4e-03", "2e-03", "1e-03"):
        assert (tmp_path / f"lad_dt{tag}.csv").exists()
    assert "observed order" in capsys.readouterr().out


def test_verify_ok(tiny, capsys):
    assert main(["verify", str(tiny), "--runs", "5"]) == 0
    assert "0 violations" in capsys.readouterr().out


def test_reproduce_ok(capsys):
    assert main(["reproduce-paper"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_reproduce_mismatch_exit_code(tmp_path, capsys):
    src = open(load_scenario("planar_six").source).read().replace("[-1, 1.2222222222222223, 0]",
                                                            "[-1, 1.3222222222222223, 0]")
    p = tmp_path / "planar_bad.scenario"
    p.write_text(src)
    assert main(["reproduce-paper", str(p)]) == 1
    assert "off by" in capsys.readouterr().err


def test_input_errors(tmp_path, capsys):
    assert main(["synth", str(tmp_path / "missing.scenario")]) == 1
    bad = tmp_path / "bad.scenario"
    bad.write_text(TINY.replace("plant: {order: 1}", "plant: {order: 1, colour: 2}"))
    assert main(["simulate", str(bad)]) == 1
    assert "bad.scenario:6" in capsys.readouterr().err


def test_synthesis_error_exit_code(tmp_path):
    p = tmp_path / "nd.scenario"
    p.write_text(TINY.replace("plant: {order: 1}", "plant: {order: 2, outputs: [1]}"))
    assert main(["synth", str(p)]) == 2


def test_simulation_assertion_exit_code(tiny, tmp_path):
    p = tmp_path / "z.scenario"
    p.write_text(TINY.replace("leader_error: 0.1", "leader_error: 1.0, assert_bounds: true"))
    assert main(["simulate", str(p), "--out", str(tmp_path / "z.csv")]) == 3


def test_console_script(tiny):
    r = subprocess.run([sys.executable, "-m", "formctl.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("formctl ")
