import json
from pathlib import Path

import pytest

from bslice import builtins, cli
from bslice.scenario import ScenarioError, loads

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_builtins_load():
    for name in builtins.names():
        scn = builtins.builtin(name)
        assert scn.anchors and scn.action() is not None


@pytest.mark.parametrize(
    "text, line",
    [
        ("[chart leaf]\nx = real\ny = rael\n", 3),
        ("[chart leaf]\nx = real\n[form w]\nchart = leaf\nterm = dx ^ dq\n", 5),
        ("x = 1\n", 1),
        ("[bogus z]\n", 1),
    ],
)
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(ScenarioError) as err:
        loads(text, source="t.bsl")
    assert err.value.line == line
    assert str(err.value).startswith(f"t.bsl:{line}:")


def test_unknown_references():
    text = builtins.text("curled_torus").replace("torus = Z", "torus = Q")
    with pytest.raises(ScenarioError):
        loads(text)


def test_builtin_list_and_show(capsys):
    code, out, _ = run(capsys, "builtin", "list")
    assert code == 0 and out.split() == builtins.names()
    code, out, _ = run(capsys, "builtin", "show", "s2xs2")
    assert code == 0 and out == builtins.text("s2xs2")
    assert run(capsys, "builtin", "show", "nope")[0] == cli.EXIT_PARSE


def test_check_passes_on_builtin(capsys, tmp_path):
    target = tmp_path / "r.json"
    code, out, _ = run(capsys, "check", "builtin:curled_torus", "--json", str(target))
    assert code == 0
    rep = json.loads(out)
    assert rep["schema"] == 1 and rep["report"]["ok"]
    assert target.read_text() == out


def test_check_reports_validation_failure(capsys, tmp_path):
    text = builtins.text("curled_torus").replace("term = dx ^ dy", "term = dx ^ dy\nterm = x * dt ^ dx")
    path = tmp_path / "bad.bsl"
    path.write_text(text)
    code, out, _ = run(capsys, "check", str(path))
    assert code == cli.EXIT_VALIDATION
    assert not json.loads(out)["report"]["ok"]


def test_parse_error_exit_code(capsys, tmp_path):
    path = tmp_path / "bad.bsl"
    path.write_text("[chart leaf]\nx = rael\n")
    code, _, err = run(capsys, "check", str(path))
    assert code == cli.EXIT_PARSE and ":2:" in err
    assert run(capsys, "check", str(tmp_path / "missing.bsl"))[0] == cli.EXIT_PARSE


def test_anchor_override(capsys):
    code, out, _ = run(capsys, "invariants", "builtin:torus_example", "--anchor", "phi=1/2,psi=0")
    assert code == 0
    anchors = json.loads(out)["report"]["anchors"]
    assert list(anchors) == ["cli"] and anchors["cli"]["l"] == 2


def test_bad_anchor_override(capsys):
    assert run(capsys, "invariants", "builtin:torus_example", "--anchor", "phi")[0] == cli.EXIT_PARSE


def test_cover_report(capsys):
    code, out, _ = run(capsys, "cover", "builtin:torus_example")
    rep = json.loads(out)["report"]
    assert code == 0
    assert rep["k"] == 4 and rep["lifted_period"] == "4" and rep["period_scaling"]


def test_normal_form_with_failing_anchor(capsys):
    code, out, _ = run(capsys, "normal-form", "builtin:s2xs2")
    rep = json.loads(out)["report"]
    assert code == cli.EXIT_VALIDATION
    assert rep["anchors"]["antipodal"]["stage"] == "model"
    assert rep["anchors"]["diagonal"]["model"]["l"] == 2


def test_moser_certification_failure_exit_code(capsys):
    code, out, _ = run(capsys, "moser", str(SCENARIOS / "moser_stiff.bsl"), "--steps", "2")
    assert code == cli.EXIT_CERTIFICATION
    assert not json.loads(out)["report"]["moser"]["pass"]


def test_moser_certifies_stiff_problem(capsys):
    code, out, _ = run(capsys, "moser", str(SCENARIOS / "moser_stiff.bsl"))
    rep = json.loads(out)["report"]["moser"]
    assert code == 0 and rep["observed_order"] >= 3


def test_report_is_byte_stable(capsys):
    a = run(capsys, "invariants", "builtin:curled_torus", "--seed", "7")[1]
    b = run(capsys, "invariants", "builtin:curled_torus", "--seed", "7")[1]
    assert a == b and json.loads(a)["seed"] == 7
