import json
from pathlib import Path

import numpy as np
import pytest

from mppi_lab.artifacts import read_csv
from mppi_lab.experiments import cmd_bias_sweep, cmd_compare, cmd_pdf_curve, cmd_solve
from mppi_lab.oracles import gibbs_mean
from mppi_lab.scenarios import get_scenario


def _column(path, name):
    _, header, rows = read_csv(path)
    i = header.index(name)
    return np.array([float(r[i]) for r in rows])


def _assert_record_lists_outputs(record, out_dir):
    written = {str(p) for p in Path(out_dir).rglob("*") if p.is_file() and "oracle_cache" not in p.parts}
    assert written == set(record.outputs)


# --- solve ------------------------------------------------------------------


def test_solve_arctan_history(tmp_path):
    spec = get_scenario("arctan2").merged(solver__iterations=10, solver__seed=1)
    res = cmd_solve(spec, tmp_path)
    path = tmp_path / "solve_arctan2.csv"
    meta, header, rows = read_csv(path)
    assert meta == {"config_hash": spec.config_hash(), "seed": "1"}
    assert header[:5] == ["j", "beta", "lambda", "u0", "u1"]
    assert len(rows) == 10
    assert _column(path, "error")[-1] <= 1e-2
    assert res.record.verdicts["final_error"] == pytest.approx(_column(path, "error")[-1])
    _assert_record_lists_outputs(res.record, tmp_path)


def test_solve_single_iteration_row(tmp_path):
    res = cmd_solve(get_scenario("quartic").merged(solver__iterations=1), tmp_path)
    _, _, rows = read_csv(tmp_path / "solve_quartic.csv")
    assert len(rows) == 1
    assert float(rows[0][1]) == 1.0
    assert res.report.history[0].beta == 1.0


def test_solve_is_byte_reproducible(tmp_path):
    spec = get_scenario("affine2").merged(solver__samples=20_000)
    cmd_solve(spec, tmp_path / "a")
    cmd_solve(spec, tmp_path / "b")
    assert (tmp_path / "a" / "solve_affine2.csv").read_bytes() == (tmp_path / "b" / "solve_affine2.csv").read_bytes()


# --- bias sweep -------------------------------------------------------------


@pytest.fixture(scope="module")
def quartic_exact_sweep(tmp_path_factory):
    return cmd_bias_sweep(get_scenario("quartic"), tmp_path_factory.mktemp("sweep"))


def test_quartic_exact_sweep_control_slope(quartic_exact_sweep):
    assert 1.9 <= quartic_exact_sweep.control_fit.slope <= 2.1


def test_quartic_exact_sweep_value_slope(quartic_exact_sweep):
    assert 3.8 <= quartic_exact_sweep.value_fit.slope <= 4.2


def test_sweep_outputs(quartic_exact_sweep):
    rec = quartic_exact_sweep.record
    names = {Path(p).name for p in rec.outputs}
    assert {"bias_quartic_exact.csv", "bias_quartic_exact_summary.json", "run_bias-sweep_quartic.json"} <= names
    summary = json.loads(Path(next(p for p in rec.outputs if p.endswith("summary.json"))).read_text())
    assert summary["value_slope"]["slope"] == pytest.approx(quartic_exact_sweep.value_fit.slope)


def test_single_beta_error_is_gibbs_mean(tmp_path):
    spec = get_scenario("quartic").merged(sweep__beta_list=(0.05,))
    res = cmd_bias_sweep(spec, tmp_path)
    assert res.control_fit is None
    inst = spec.build_instance()
    assert res.control_error[0] == pytest.approx(abs(gibbs_mean(inst, 0.05)[0]), abs=1e-12)


def test_sampled_standard_errors_shrink_tenfold(tmp_path):
    betas = (0.1, 0.2, 0.3, 0.4)
    base = get_scenario("quartic").merged(sweep__mode="sampled", sweep__beta_list=betas, sweep__seeds=(0, 1, 2))
    small = cmd_bias_sweep(base.merged(solver__samples=1_000), tmp_path / "small")
    large = cmd_bias_sweep(base.merged(solver__samples=100_000), tmp_path / "large")
    ratio = small.std_error / large.std_error
    assert np.all((ratio > 7.0) & (ratio < 13.0))
    meta, _, _ = read_csv(tmp_path / "large" / "bias_quartic_sampled.csv")
    assert meta["seed"] == "0"


# --- density curves ---------------------------------------------------------


def test_pdf_curves(tmp_path):
    res = cmd_pdf_curve(get_scenario("quartic"), tmp_path, betas=(1.0, 0.1))
    for b, curve in res.curves.items():
        w, d = _column(tmp_path / f"pdf_quartic_beta{b!r}.csv", "w"), _column(tmp_path / f"pdf_quartic_beta{b!r}.csv", "density")
        assert np.trapezoid(d, w) == pytest.approx(1.0, abs=1e-6)
    wide = res.curves[1.0]
    basin = (wide.w > -0.6) & (wide.w < -0.3)
    assert wide.density[basin].min() > 1e-3
    assert res.curves[0.1].mass(-0.1, 0.1) > 0.99
    _assert_record_lists_outputs(res.record, tmp_path)


# --- comparison -------------------------------------------------------------


@pytest.fixture(scope="module")
def affine_compare(tmp_path_factory):
    out = tmp_path_factory.mktemp("cmp_affine")
    return cmd_compare(get_scenario("affine2"), out), out


def test_compare_affine_standard_mppi_matches_cls(affine_compare):
    cmp, _ = affine_compare
    band = 3.0 * (cmp.standard_se[0] + cmp.cls.tol)
    assert abs(cmp.standard_u[0] - cmp.cls.u0[0]) <= band


def test_compare_outputs(affine_compare):
    cmp, out = affine_compare
    _, header, rows = read_csv(out / "compare_affine2.csv")
    assert header == ["label", "u0", "u1", "value", "tol", "std_error"]
    assert [r[0] for r in rows[:4]] == ["det", "ols", "cls", "standard_mppi"]
    assert len(rows) == 4 + len(cmp.iterates)
    _assert_record_lists_outputs(cmp.record, out)


def test_compare_arctan_endpoint_matches_det(tmp_path):
    cmp = cmd_compare(get_scenario("arctan2"), tmp_path)
    assert np.linalg.norm(cmp.iterates[-1] - cmp.det.minimizer) <= 1e-2
    assert cmp.checks["det_mppi_endpoint_matches_det"]["passed"]


def test_compare_symmetric_terminal_gives_zero_everywhere(tmp_path):
    spec = get_scenario("affine2").merged(problem__terminal="sym6", problem__x0=0.0, solver__samples=20_000)
    cmp = cmd_compare(spec, tmp_path)
    np.testing.assert_allclose(cmp.det.minimizer, [0.0, 0.0], atol=max(cmp.det.tol, 1e-7))
    assert abs(cmp.cls.u0[0]) <= max(cmp.cls.tol, 1e-6)
    np.testing.assert_allclose(cmp.ols.minimizer, [0.0, 0.0], atol=max(cmp.ols.tol, 1e-7))


def test_oracle_cache_reused(tmp_path):
    spec = get_scenario("arctan2").merged(solver__iterations=2, solver__samples=2_000)
    cmd_solve(spec, tmp_path)
    cached = sorted((tmp_path / "oracle_cache").glob("*.json"))
    assert len(cached) == 1
    stamp = cached[0].stat().st_mtime_ns
    cmd_solve(spec.merged(solver__seed=5), tmp_path)
    assert cached[0].stat().st_mtime_ns == stamp
