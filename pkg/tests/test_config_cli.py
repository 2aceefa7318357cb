"""Configuration grammar and the command-line surface."""
import json
import subprocess
import sys
from pathlib import Path

import pytest

from coneflow.cli import main
from coneflow.config import canonical_text, config_hash, parse_config, parse_text
from coneflow.errors import ConfigError

TINY_CONFIG = """
[cone]
lambda = 1
beta = 0.5
tau0 = 1
tau_inf = 1

[vector_field]
c = 0.3

[grid]
s_min = -8
s_max = 8
n = 129

[regularization]
epsilon = 0.125
k = 0.3

[flow]
t_end = 0.2
output_cadence = 0.1

[continuation]
eps_list = 0.25,0.125
window = -4:4
time_samples = 0,0.2
"""


def test_defaults_fill_smooth_config():
    app = parse_text("[cone]\nbeta = 1\n")
    assert app.flow.cone.beta == 1.0
    assert app.flow.vf.c == 0.0
    assert app.flow.grid.n == 2049
    assert app.flow.scheme == "semi-implicit-newton"


def test_unknown_key_line_precise():
    with pytest.raises(ConfigError, match=r"line 2: unknown key 'betta'"):
        parse_text("[cone]\nbetta = 1\n")
    with pytest.raises(ConfigError, match=r"line 1: unknown section"):
        parse_text("[conical]\n")
    with pytest.raises(ConfigError, match=r"line 1: assignment before"):
        parse_text("beta = 1\n")


def test_invariant_violation_names_constraint():
    with pytest.raises(ConfigError, match="degree constraint"):
        parse_text("[cone]\nlambda = 1\nbeta = 0.5\ntau0 = 1.5\ntau_inf = 1\n")
    with pytest.raises(ConfigError, match="gamma"):
        parse_text("[cone]\nlambda = 3\nbeta = 0.5\ntau0 = 3\ntau_inf = 3\n")


def test_round_trip_canonical():
    app = parse_text(TINY_CONFIG)
    text = canonical_text(app)
    again = parse_text(text)
    assert again == app
    assert canonical_text(again) == text
    assert config_hash(again) == config_hash(app)


def test_shipped_configs_parse():
    config_dir = Path(__file__).resolve().parents[1] / "configs"
    for name in ("kahler-einstein.cfg", "cone-strong.cfg", "cone-mild.cfg"):
        app = parse_config(config_dir / name)
        assert app.flow.t_end > 0


@pytest.fixture(autouse=True)
def _clean_out_env(monkeypatch):
    # CONEFLOW_OUT overrides --out by contract; keep the suite hermetic.
    monkeypatch.delenv("CONEFLOW_OUT", raising=False)


@pytest.fixture()
def tiny_config(tmp_path) -> Path:
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return path


def test_cli_run_and_diagnose(tiny_config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(tiny_config), "--out", str(out)]) == 0
    for name in (
        "manifest.json", "config.canonical", "grid.csv",
        "trajectory.csv", "curvature.csv", "diagnostics.jsonl", "diagnostics.csv",
    ):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["toolVersion"]
    assert len(manifest["configHash"]) == 64
    roles = {o["path"]: o["role"] for o in manifest["outputs"]}
    assert "trajectory.csv" in roles
    header = (out / "diagnostics.csv").read_text().splitlines()[0]
    assert header == (
        "t,supPhi,supPhidot,traceEpsPhi,tracePhiEps,calabiS,rmMax,supXphi,"
        "coneExp0,coneExpInf,solitonResidual,weakResidual,holderSeminorm"
    )
    # trajectory floats round-trip: 17 significant digits
    row = (out / "trajectory.csv").read_text().splitlines()[1]
    values = row.split(",")
    assert float(values[0]) == 0.0

    assert main(["diagnose", "--run-dir", str(out)]) == 0
    captured = capsys.readouterr()
    assert "bit-stable" in captured.out

    # tampering with a stored record must be detected
    stored = (out / "diagnostics.jsonl").read_text().splitlines()
    stored[0] = stored[0].replace('"supPhi": 0', '"supPhi": 1', 1)
    (out / "diagnostics.jsonl").write_text("\n".join(stored) + "\n")
    assert main(["diagnose", "--run-dir", str(out)]) == 1


def test_cli_continuation(tiny_config, tmp_path):
    out = tmp_path / "cont"
    rc = main([
        "continuation", "--config", str(tiny_config), "--out", str(out),
        "--threads", "2",
    ])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["epsList"] == [0.25, 0.125]
    assert len(report["perEps"]) == 2
    assert (out / "runs/run_00_eps_0.25/trajectory.csv").exists()
    assert (out / "runs/run_01_eps_0.125/diagnostics.jsonl").exists()


def test_cli_window_and_eps_overrides(tiny_config, tmp_path):
    out = tmp_path / "cont2"
    rc = main([
        "continuation", "--config", str(tiny_config), "--out", str(out),
        "--eps-list=0.25,0.125,0.0625", "--window=-3:3",
    ])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["epsList"] == [0.25, 0.125, 0.0625]
    assert report["window"] == [-3.0, 3.0]


def test_cli_error_paths(tmp_path, capsys):
    rc = main(["run", "--config", str(tmp_path / "missing.cfg")])
    assert rc == 2
    captured = capsys.readouterr()
    assert "coneflow: error:" in captured.err

    bad = tmp_path / "bad.cfg"
    bad.write_text("[cone]\nbeta = 2\n", encoding="utf-8")
    rc = main(["run", "--config", str(bad)])
    assert rc == 2


def test_cli_env_out_overrides_flag(tiny_config, tmp_path, monkeypatch):
    target = tmp_path / "envout"
    monkeypatch.setenv("CONEFLOW_OUT", str(target))
    ignored = tmp_path / "flagout"
    assert main([
        "run", "--config", str(tiny_config), "--out", str(ignored), "--seedless",
    ]) == 0
    assert (target / "manifest.json").exists()
    assert not ignored.exists()  # the environment variable wins
    manifest = json.loads((target / "manifest.json").read_text())
    assert manifest["seedless"] is True


def test_cli_fixtures_subcommand(tmp_path):
    from coneflow.fixtures import parse_fixtures

    out = tmp_path / "fix"
    assert main(["fixtures", "--out", str(out)]) == 0
    text = (out / "fixtures.txt").read_text(encoding="utf-8")
    values = parse_fixtures(text)
    value, _tol = values["chi_eps0_rho_half_u1"]
    assert value == pytest.approx(4.0, abs=1e-9)
    committed = parse_fixtures(
        (Path(__file__).parent / "fixtures" / "oracles.txt").read_text()
    )
    assert set(values) == set(committed)
    for name, (value, tol) in values.items():
        assert abs(value - committed[name][0]) <= tol, name


def test_cli_entry_point_installed():
    proc = subprocess.run(
        [sys.executable, "-m", "coneflow.cli", "--help"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "run" in proc.stdout and "continuation" in proc.stdout


def test_cli_einstein_config_reports_fixed_point(tmp_path):
    """The shipped Einstein config yields supPhi at solver zero in every record."""
    config = Path(__file__).resolve().parents[1] / "configs" / "kahler-einstein.cfg"
    out = tmp_path / "ke"
    assert main(["run", "--config", str(config), "--out", str(out)]) == 0
    for line in (out / "diagnostics.jsonl").read_text().strip().splitlines():
        record = json.loads(line)
        assert abs(record["supPhi"]) <= 1e-8
        assert abs(record["solitonResidual"]) <= 1e-8


def test_cli_diagnose_missing_artifacts(tmp_path, capsys):
    run_dir = tmp_path / "broken"
    run_dir.mkdir()
    (run_dir / "config.canonical").write_text("[cone]\nbeta = 1\n", encoding="utf-8")
    rc = main(["diagnose", "--run-dir", str(run_dir)])
    assert rc == 2
    assert "missing trajectory.csv" in capsys.readouterr().err
