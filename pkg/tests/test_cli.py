import json
from pathlib import Path

import pytest

from hardycap.cli import EXIT_CONSTRAINT, EXIT_OK, main
from hardycap.scenario import ScenarioError, parse_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"

BASE = """seed = 3
[domain]
kind = "box"
lo = [0.0, 0.0]
hi = [1.0, 1.0]
h = "1/16"
[params]
p = {p}
q = {q}
beta = 0.0
"""


def scenario(p=2.0, q=2.0, extra=""):
    return BASE.format(p=p, q=q) + extra


def test_parse_defaults():
    sc = parse_scenario(scenario())
    assert sc.h == pytest.approx(1 / 16)
    assert sc.c == pytest.approx(1 / 54)
    assert sc.warnings == []


@pytest.mark.parametrize("p,q,needle", [(1.0, 2.0, "requires 1 < p"), (2.0, 1.5, "requires p <= q")])
def test_parameter_constraints(p, q, needle):
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(scenario(p, q))
    assert any(needle in m for m in exc.value.messages)
    assert any(m.startswith("line ") for m in exc.value.messages)


def test_errors_are_consolidated():
    text = scenario(1.0, 0.5, '[maximal]\nkappa = 0.3\n[whitney]\nc = 0.5\n')
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(text)
    msgs = exc.value.messages
    assert len(msgs) >= 3
    assert any("kappa" in m for m in msgs) and any("Whitney" in m for m in msgs)


def test_syntax_error_reports_line():
    with pytest.raises(ScenarioError) as exc:
        parse_scenario("seed = 1\n[domain\nkind = 'box'\n")
    assert "line 2" in exc.value.messages[0]


def test_c_warning_above_limit():
    sc = parse_scenario(scenario(extra='[whitney]\nc = "1/50"\n'))
    assert any("1/53" in w for w in sc.warnings)


def test_missing_seed_and_unknown_section():
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(scenario().replace("seed = 3\n", "") + "[bogus]\nx = 1\n")
    msgs = " ".join(exc.value.messages)
    assert "seed" in msgs and "bogus" in msgs


def test_check_command(tmp_path, capsys):
    assert main(["check", str(SCENARIOS / "square.toml")]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["seed"] == 7
    bad = tmp_path / "bad.toml"
    bad.write_text(scenario(1.0))
    assert main(["check", str(bad)]) == EXIT_CONSTRAINT
    assert "1 < p" in capsys.readouterr().err
    assert main(["check", str(tmp_path / "missing.toml")]) == EXIT_CONSTRAINT


def test_qregular_override_rejected(tmp_path):
    f = tmp_path / "s.toml"
    f.write_text(scenario(1.5, 7.0))
    assert main(["run", "domain", "--scenario", str(f), "--out", str(tmp_path / "o"), "--mode", "qregular"]) \
        == EXIT_CONSTRAINT


def test_run_domain_and_whitney(tmp_path):
    f = tmp_path / "s.toml"
    f.write_text(scenario())
    out = tmp_path / "out"
    for sub in ("domain", "whitney"):
        assert main(["run", sub, "--scenario", str(f), "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["status"] == "ok" and rep["subcommand"] == "whitney"
    assert rep["results"]["whitney"]["cover"]["passed"] in (True, False)
    manifest = (out / "MANIFEST").read_text().splitlines()
    assert manifest[0] == "status: complete"
    for name in ("domain_distance.csv", "domain_distance.png", "whitney_balls.csv", "report.json"):
        assert (out / name).exists()


def test_run_hardy_general_exponents(tmp_path):
    f = tmp_path / "s.toml"
    f.write_text(scenario(3.0, 4.0, '[convolution]\ns = 1.5\n'))
    out = tmp_path / "out"
    assert main(["run", "hardy", "--scenario", str(f), "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["results"]["hardy"]


def test_seed_override_is_recorded(tmp_path):
    f = tmp_path / "s.toml"
    f.write_text(scenario())
    out = tmp_path / "out"
    assert main(["run", "domain", "--scenario", str(f), "--out", str(out), "--seed", "11"]) == EXIT_OK
    assert json.loads((out / "report.json").read_text())["seed"] == 11
