import json
from pathlib import Path

import pytest

from rigidlab.cli import main
from rigidlab.config import ConfigError, from_dict, load, shipped_configs

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
FLAGSHIP = CONFIGS / "theorem1_flagship.toml"


def test_shipped_configs_match_repository_copies():
    shipped = shipped_configs()
    assert set(shipped) == {p.stem for p in CONFIGS.glob("*.toml")}
    for name, path in shipped.items():
        assert path.read_text() == (CONFIGS / f"{name}.toml").read_text()
        load(path)


def test_missing_config_exits_1(tmp_path, capsys):
    assert main(["rigidity", "--config", str(tmp_path / "none.toml"), "--out", str(tmp_path)]) == 1
    assert "not found" in capsys.readouterr().err


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["rigidity"])
    assert exc.value.code == 1


@pytest.mark.parametrize("text,msg", [
    ("[sequences.F]\nfamily = '0.5*p1^2 + q1'\n", "periodic"),
    ("[sequences.F]\nfamily = '0.5*p1^^2'\n", "position"),
    ("[hamiltonian]\nsource = 'cos(q1) + 0.5*p1^2'\n[experiment]\nks = [0]\n", "ks"),
    ("[hamiltonian]\nsource = 'cos(q1) + 0.5*p1^2'\n[experiment]\nmode = 'both'\n", "mode"),
    ("[hamiltonian]\nsource = 'cos(q1) + 0.5*p1^2'\n[experiment.tolerances]\nfoo = 1\n", "unknown"),
    ("name = \n", "Invalid"),
    ("[manifold]\nkind = 'torus'\ndim = 4\n[hamiltonian]\nsource = 'p1'\n", "manifold"),
])
def test_bad_configs_exit_1(tmp_path, capsys, text, msg):
    path = tmp_path / "bad.toml"
    path.write_text(text)
    assert main(["parse-check", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    assert msg.lower() in capsys.readouterr().err.lower()


def test_subcommand_needing_sequence_exits_1(tmp_path):
    assert main(["legendre", "--config", str(CONFIGS / "pendulum.toml"), "--out", str(tmp_path)]) == 1


def test_flagship_end_to_end(tmp_path):
    out = tmp_path / "runs"
    assert main(["rigidity", "--config", str(FLAGSHIP), "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["verdict"] == "pass" and doc["results"]["hypotheses_met"]
    assert doc["results"]["conclusion_sup"] <= 1e-8
    assert {"numpy", "scipy", "rigidlab"} <= set(doc["versions"])
    csv_lines = (out / "report.csv").read_text().splitlines()
    assert csv_lines[0] == "section,name,base_point,k,quantity,value,verdict"
    assert csv_lines[-1] == "summary,overall,,,verdict,,pass"
    assert list((out / "arcs").glob("*.csv")) and list((out / "arcs").glob("*.json"))
    assert (out / "hypothesis_convergence.png").stat().st_size > 0


def test_not_met_variant_exits_0(tmp_path):
    out = tmp_path / "runs"
    assert main(["rigidity", "--config", str(CONFIGS / "flagship_g_p1.toml"), "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["verdict"] == "hypothesis-not-met"
    assert "summary,overall,,,verdict,,hypothesis-not-met" in (out / "report.csv").read_text()


def test_report_determinism(tmp_path):
    for d in ("a", "b"):
        assert main(["rigidity", "--config", str(FLAGSHIP), "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()
    for arc in (tmp_path / "a" / "arcs").glob("*.csv"):
        assert arc.read_bytes() == (tmp_path / "b" / "arcs" / arc.name).read_bytes()


@pytest.mark.parametrize("cmd", ["parse-check", "legendre", "flow", "minimize", "hj", "bracket"])
def test_other_subcommands_on_flagship(tmp_path, cmd):
    out = tmp_path / cmd
    assert main([cmd, "--config", str(FLAGSHIP), "--out", str(out)]) == 0
    assert (out / "report.csv").exists() and (out / "report.json").exists()


@pytest.mark.parametrize("cmd", ["parse-check", "flow", "hj"])
def test_single_hamiltonian_subcommands(tmp_path, cmd):
    assert main([cmd, "--config", str(CONFIGS / "pendulum.toml"), "--out", str(tmp_path)]) == 0


def test_fail_verdict_exits_2(tmp_path):
    # a tolerance no quadrature reaches turns the identity check into a fail
    text = FLAGSHIP.read_text() + "\n[experiment.tolerances]\nidentity = 1e-30\n"
    path = tmp_path / "strict.toml"
    path.write_text(text)
    assert main(["bracket", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


def test_config_defaults():
    cfg = from_dict({"hamiltonian": {"source": "0.5*p1^2"}})
    assert cfg.ks == [4, 8, 16, 32, 64, 128, 256] and cfg.box.dim == 1
    with pytest.raises(ConfigError):
        from_dict({})
    with pytest.raises(ConfigError):
        cfg.require_F()
