import json
import os
from pathlib import Path

import numpy as np
import pytest

from cavityfb import cli, evolve, fock
from cavityfb.errors import InvalidArgument, UnphysicalBath
from cavityfb.scenario import (ConfigError, compare_report, eval_operator, parse_scenario, run,
                               write_artifacts)

SCEN = Path(__file__).resolve().parents[1] / "scenarios"

STEADY = """
scheme:
  type: quadrature
  lambda: 1.0
truncation:
  dim: 20
mode: steady
"""

TRAJ = """
scheme:
  type: quadrature
  Y: "-0.5 * y"
truncation:
  dim: 5
initial:
  state: coherent
  alpha: [0.5, 0.0]
solver:
  dt: 0.001
  t_final: 0.2
  stride: 50
mode:
  type: trajectories
  n: 60
  seed: 4
"""


def _write(tmp_path, text, name="s.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# ----------------------------------------------------------------- parsing

def test_defaults_are_filled_in():
    sc = parse_scenario(STEADY)
    c = sc.config
    assert c["truncation"]["driven_dim"] == 4
    assert c["solver"] == {"dt": 1e-3, "t_final": 5.0, "stride": 10}
    assert c["initial"] == {"state": "vacuum"}
    assert c["outputs"] == ["x", "y", "n", "Vx", "Vy"]
    assert c["bath"]["N"] == 0.0
    assert len(sc.config_sha256) == 64


def test_trajectory_defaults():
    sc = parse_scenario(STEADY.replace("mode: steady", "mode: trajectories"))
    assert sc.config["mode"]["n"] == 500 and sc.config["mode"]["seed"] == 0
    assert sc.config["mode"]["unraveling"] == "homodyne"


def test_overrides_change_hash():
    a = parse_scenario(TRAJ)
    b = parse_scenario(TRAJ, {"mode.seed": 5})
    assert b.config["mode"]["seed"] == 5
    assert a.config_sha256 != b.config_sha256


def test_unknown_key_reports_path_and_line():
    with pytest.raises(ConfigError) as e:
        parse_scenario(STEADY.replace("  dim: 20", "  dim: 20\n  dimm: 3"))
    assert "truncation.dimm" in str(e.value) and "line 7" in str(e.value)


def test_missing_required_field():
    with pytest.raises(ConfigError, match="truncation"):
        parse_scenario("scheme: {type: none}\nmode: steady\n")


def test_malformed_yaml():
    with pytest.raises(ConfigError, match="line"):
        parse_scenario("scheme: [unclosed\n")


def test_unphysical_bath():
    with pytest.raises(UnphysicalBath):
        parse_scenario(STEADY + "bath: {N: 0.1, M: [1.0, 0.0]}\n")


def test_non_hermitian_operator_rejected():
    with pytest.raises(ConfigError, match="Hermitian"):
        parse_scenario(STEADY.replace("lambda: 1.0", 'Y: "a"'))


@pytest.mark.parametrize("expr", ["__import__('os')", "a.conj", "open", "a[0]", "lambda: 1", "x if 1 else y"])
def test_expression_grammar_is_closed(expr):
    with pytest.raises(ConfigError):
        eval_operator(expr, fock.make_space(3))


def test_expression_values():
    sp = fock.make_space(4)
    x, y = fock.quadratures(sp)
    op = eval_operator("0.5 * (a + adag) - y / 2 + n**2 + 2*pi*I", sp)
    want = 0.5 * x.matrix - 0.5 * y.matrix + fock.number(sp).matrix @ fock.number(sp).matrix + 2 * np.pi * np.eye(4)
    assert np.allclose(op.matrix, want)


# ------------------------------------------------------------------- modes

def test_steady_mode():
    res = run(parse_scenario(STEADY))
    assert res.summary["results"]["steady"]["Vx"] == pytest.approx(4 / 3, abs=1e-6)
    assert res.files["populations.csv"].startswith("# config_sha256: ")


def test_lindblad_check_mode():
    res = run(parse_scenario((SCEN / "lindblad_intensity.yaml").read_text()))
    r = res.summary["results"]
    assert not r["expanded"]["valid"] and r["lindblad"]["valid"]


def test_spectrum_mode():
    res = run(parse_scenario((SCEN / "spectrum_complex.yaml").read_text()))
    r = res.summary["results"]
    assert r["max_closed_vs_transfer"] < 1e-10
    assert r["min_Sy"] == pytest.approx((2.75 / 4.75) ** 2)
    assert r["steady_variance"]["Vx"] == pytest.approx(9 / 11)


def test_compare_report_identical_runs():
    sp = fock.make_space(4)
    from cavityfb import generators as gen

    L = gen.single_cavity_liouvillian(fock.annihilation(sp))
    r = evolve.propagate(L, fock.fock_state(sp, 1), 0.2, dt=0.01)
    rep = compare_report(r, r, 0.01)
    assert rep.max_distance < 1e-14 and rep.passed
    r2 = evolve.propagate(L, fock.fock_state(sp, 1), 0.2, dt=0.01, stride=5)
    with pytest.raises(InvalidArgument):
        compare_report(r, r2)


def test_trajectories_mode_is_reproducible():
    a = run(parse_scenario(TRAJ))
    b = run(parse_scenario(TRAJ))
    assert a.files == b.files and a.summary == b.summary
    assert a.summary["results"]["within_3_stderr"]
    assert json.loads(a.files["seeds.json"])["base_seed"] == 4


# --------------------------------------------------------------------- CLI

def test_cli_run_writes_artifacts_byte_identically(tmp_path):
    cfg = _write(tmp_path, TRAJ)
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert cli.main(["run", "--config", cfg, "--out", str(out1)]) == 0
    assert cli.main(["run", "--config", cfg, "--out", str(out2), "--threads", "2"]) == 0
    for name in ("ensemble.csv", "seeds.json", "summary.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    assert json.loads((out1 / "timing.json").read_text())["threads"] == 1
    first = (out1 / "ensemble.csv").read_text().splitlines()[0]
    summary = json.loads((out1 / "summary.json").read_text())
    assert first == f"# config_sha256: {summary['config_sha256']}"


def test_cli_seed_flag(tmp_path):
    cfg = _write(tmp_path, TRAJ)
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o"), "--seed", "9"]) == 0
    assert json.loads((tmp_path / "o" / "seeds.json").read_text())["base_seed"] == 9


def test_cli_validate_echoes_defaults(tmp_path, capsys):
    assert cli.main(["validate", "--config", _write(tmp_path, STEADY)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["scenario"]["solver"]["stride"] == 10


def test_cli_config_error_writes_nothing(tmp_path, capsys):
    cfg = _write(tmp_path, STEADY.replace("mode: steady", "mode: sideways"))
    out = tmp_path / "o"
    assert cli.main(["run", "--config", cfg, "--out", str(out)]) == 2
    assert not out.exists()
    assert "mode.type" in capsys.readouterr().err


def test_cli_missing_file(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == 2


def test_cli_unphysical_exit_code(tmp_path):
    cfg = _write(tmp_path, STEADY + "bath: {N: 0.0, M: [0.5, 0.0]}\n")
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_cli_numerical_failure_exit_code(tmp_path):
    text = "scheme: {type: mirror-loop, phi: pi}\ntruncation: {dim: 5}\nmode: steady\n"
    assert cli.main(["run", "--config", _write(tmp_path, text), "--out", str(tmp_path / "o")]) == 4


def test_cli_lindblad_check_forces_mode(tmp_path, capsys):
    cfg = _write(tmp_path, STEADY.replace("type: quadrature\n  lambda: 1.0", 'type: intensity\n  Z: "0.5 * x"')
                 .replace("dim: 20", "dim: 6"))
    assert cli.main(["lindblad-check", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["mode"] == "lindblad-check"


def test_cli_compare_threshold_exit_code(tmp_path):
    text = """
scheme: {type: quadrature, lambda: 1.0}
truncation: {dim: 6, driven_dim: 3}
initial: {state: coherent, alpha: [0.5, 0.0]}
solver: {dt: 0.002, t_final: 0.5, stride: 25}
mode: {type: compare, gamma2: [20], threshold: 0.05}
"""
    cfg = _write(tmp_path, text)
    assert cli.main(["compare", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["compare", "--config", cfg, "--out", str(tmp_path / "b"), "--tolerance", "1e-9"]) == 5
    assert os.path.exists(tmp_path / "b" / "compare.csv")


def test_cli_spectra_subcommand(tmp_path):
    cfg = str(SCEN / "spectrum_complex.yaml")
    assert cli.main(["spectra", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "spectrum.csv").read_text().splitlines()
    assert rows[1] == "omega,Sx,Sy,Sx_transfer,Sy_transfer" and len(rows) == 53


@pytest.mark.parametrize("name", ["steady_quadrature.yaml", "trajectories_homodyne.yaml",
                                  "mirror_heterodyne.yaml", "compare_quadrature.yaml"])
def test_shipped_scenarios_validate(name):
    parse_scenario((SCEN / name).read_text())


def test_write_artifacts_without_timing(tmp_path):
    res = run(parse_scenario(STEADY))
    write_artifacts(res, str(tmp_path))
    assert sorted(os.listdir(tmp_path)) == ["populations.csv", "summary.json"]
