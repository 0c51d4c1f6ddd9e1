import json

import pytest

from mppi_lab.cli import build_parser, main, resolve_spec
from mppi_lab.scenarios import get_scenario


def test_solve_exit_zero(tmp_path, capsys):
    code = main(["solve", "quartic", "--iterations", "2", "--samples", "2000", "--out-dir", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "solve_quartic.csv").exists()
    assert "value=" in capsys.readouterr().out


def test_unknown_scenario_exit_two(tmp_path, capsys):
    assert main(["solve", "nope", "--out-dir", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "unknown scenario" in err and "arctan2" in err


def test_missing_scenario_exit_two(tmp_path):
    assert main(["solve", "--out-dir", str(tmp_path)]) == 2


def test_bad_flag_value_exit_two(tmp_path):
    assert main(["solve", "quartic", "--shrink-factor", "1.5", "--out-dir", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_unknown_only_filter_exit_two(tmp_path):
    assert main(["accept", "--only", "nothing", "--out-dir", str(tmp_path)]) == 2


def test_numeric_error_exit_three(tmp_path, capsys):
    cfg = tmp_path / "narrow.ini"
    text = get_scenario("quartic").merged(sweep__pdf_grid=(-0.5, 0.5, 101.0)).to_text()
    cfg.write_text(text)
    assert main(["pdf-curve", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 3
    assert "GridExtentError" in capsys.readouterr().err


def test_failed_check_exit_one(tmp_path):
    assert main(["compare", "affine2", "--samples", "20000", "--out-dir", str(tmp_path)]) == 1


def test_config_then_flags_precedence(tmp_path):
    cfg = tmp_path / "s.ini"
    cfg.write_text(get_scenario("arctan2").merged(solver__samples=5000, solver__seed=7).to_text())
    args = build_parser().parse_args(["solve", "--config", str(cfg), "--samples", "300"])
    spec = resolve_spec(args)
    assert spec.solver["samples"] == 300
    assert spec.solver["seed"] == 7
    args = build_parser().parse_args(["solve", "quartic", "--config", str(cfg)])
    with pytest.raises(Exception):
        resolve_spec(args)


def test_accept_only_runs_selected_group(tmp_path, capsys):
    code = main(["accept", "--only", "canonical", "--out-dir", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert out.count("[canonical]") == 1
    assert "[certainty]" not in out
    report = json.loads((tmp_path / "acceptance.json").read_text())
    assert [c["key"] for c in report["criteria"]] == ["canonical"]


@pytest.fixture(scope="module")
def tampered_report(tmp_path_factory):
    out = tmp_path_factory.mktemp("tamper")
    cfg = out / "tampered.ini"
    cfg.write_text(get_scenario("quartic").merged(problem__c3=150.0).to_text())
    code = main(["accept", "--config", str(cfg), "--only", "slopes,landscape", "--out-dir", str(out)])
    report = json.loads((out / "acceptance.json").read_text())
    return code, {c["key"]: c["passed"] for c in report["criteria"]}


def test_tampered_quartic_fails_landscape(tampered_report):
    code, verdicts = tampered_report
    assert code == 1
    assert verdicts["landscape"] is False


def test_tampered_quartic_slopes_still_pass(tampered_report):
    _, verdicts = tampered_report
    assert verdicts["slopes.control"] and verdicts["slopes.value"]
