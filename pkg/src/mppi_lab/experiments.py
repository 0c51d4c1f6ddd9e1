"""Experiment commands: solve, bias sweep, optimal-density curves, oracle comparison.

Each command takes a resolved :class:`~mppi_lab.scenarios.ScenarioSpec`,
writes CSV files plus a plot script into ``out_dir``, and returns its
numeric results together with a :class:`~mppi_lab.artifacts.RunRecord`.
Oracle solutions are cached under ``out_dir/oracle_cache``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mppi_lab.artifacts import RunRecord, write_csv, write_json, write_plot_script
from mppi_lab.errors import ContractViolation, InsufficientDataError
from mppi_lab.oracles import (
    OracleCache,
    OracleSolution,
    SlopeFit,
    cls_ocp_oracle,
    det_ocp_oracle,
    find_mode,
    gibbs_mean,
    ols_ocp_oracle,
    optimal_density_curve,
    slope_fit,
)
from mppi_lab.problem import OcpInstance, value_of
from mppi_lab.scenarios import ScenarioSpec
from mppi_lab.solver import SolveReport, deterministic_mppi_solve, standard_mppi_step


# --- cached references ------------------------------------------------------


def _cache(out_dir: Path | None) -> OracleCache | None:
    return OracleCache(Path(out_dir) / "oracle_cache") if out_dir is not None else None


def _cached(cache: OracleCache | None, spec: ScenarioSpec, name: str, params: dict, compute) -> OracleSolution:
    if cache is None:
        return compute()
    problem_hash = ScenarioSpec(spec.name, spec.problem).config_hash()
    return cache.fetch(problem_hash, name, params, compute)


def det_reference(spec: ScenarioSpec, inst: OcpInstance, cache: OracleCache | None = None) -> OracleSolution:
    o = spec.oracle
    params = {"box": list(spec.box), "points": o["grid_points"], "rounds": o["refine_rounds"]}
    return _cached(
        cache, spec, "det", params, lambda: det_ocp_oracle(inst, spec.box, o["grid_points"], o["refine_rounds"])
    )


def ols_reference(spec: ScenarioSpec, inst: OcpInstance, cache: OracleCache | None = None) -> OracleSolution:
    o = spec.oracle
    params = {"box": list(spec.box), "order": o["quad_order"], "rounds": o["refine_rounds"]}
    return _cached(
        cache, spec, "ols", params, lambda: ols_ocp_oracle(inst, o["quad_order"], spec.box, rounds=o["refine_rounds"])
    )


def cls_reference(spec: ScenarioSpec, inst: OcpInstance, cache: OracleCache | None = None) -> OracleSolution:
    o = spec.oracle
    params = {"box": list(spec.box), "order": o["quad_order"], "policy_points": o["policy_points"]}
    return _cached(
        cache,
        spec,
        "cls",
        params,
        lambda: cls_ocp_oracle(inst, o["quad_order"], box=spec.box, policy_points=o["policy_points"]),
    )


def _u_cols(inst: OcpInstance) -> list[str]:
    return [f"u{i}" for i in range(inst.control_dim)]


def _out(out_dir) -> Path:
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


# --- solve ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SolveOutcome:
    report: SolveReport
    errors: np.ndarray | None
    reference: OracleSolution | None
    record: RunRecord


def cmd_solve(spec: ScenarioSpec, out_dir, workers: int = 1) -> SolveOutcome:
    """Deterministic MPPI with the iterate history written as CSV."""
    t0 = time.perf_counter()
    out = _out(out_dir)
    inst = spec.build_instance()
    cfg = spec.mppi_config(inst, workers)
    chash = spec.config_hash()
    rec = RunRecord(spec.name, "solve", chash, cfg.seed)
    report = deterministic_mppi_solve(inst, cfg)
    ref = det_reference(spec, inst, _cache(out)) if inst.control_dim <= 4 else None
    errors = None
    if ref is not None:
        errors = np.array([np.linalg.norm(h.control - ref.minimizer) for h in report.history])
    rows = []
    for i, h in enumerate(report.history):
        err = "" if errors is None else errors[i]
        rows.append([h.j, h.beta, h.lam, *h.control, value_of(inst, h.control), err, h.ess, h.n_rejected])
    header = ["j", "beta", "lambda", *_u_cols(inst), "value", "error", "ess", "rejected"]
    csv_path = rec.add(write_csv(out / f"solve_{spec.name}.csv", header, rows, chash, cfg.seed))
    rec.add(
        write_plot_script(
            out / f"solve_{spec.name}_plot.py",
            f"deterministic MPPI error per iteration ({spec.name})",
            f'd = load("{csv_path.name}")\n'
            'ax.semilogy(d["j"], d["error"], "o-", label="||U_j - U*_det||")\n'
            'ax.set_xlabel("iteration j")\nax.set_ylabel("error")',
        )
    )
    rec.wall_time = time.perf_counter() - t0
    if errors is not None:
        rec.verdicts["final_error"] = float(errors[-1])
    rec.save(out)
    return SolveOutcome(report, errors, ref, rec)


# --- bias sweep -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BiasSweep:
    betas: np.ndarray
    controls: np.ndarray
    control_error: np.ndarray
    value_gap: np.ndarray
    std_error: np.ndarray | None
    replicate_se: np.ndarray | None
    control_fit: SlopeFit | None
    value_fit: SlopeFit | None
    reference: OracleSolution
    record: RunRecord = field(repr=False)


def _fit_or_none(betas, errors) -> SlopeFit | None:
    try:
        return slope_fit(list(zip(betas, errors)))
    except InsufficientDataError:
        return None


def exact_bias(spec: ScenarioSpec, inst: OcpInstance, betas, lam0: float) -> np.ndarray:
    """Exact MPPI solutions (Gibbs means) for every ``beta``."""
    box = spec.gibbs_box
    tol = float(spec.oracle["abs_tol"])
    sigma0 = spec.mppi_config(inst).initial_covariance(inst)
    mode = find_mode(inst, box, lam0, sigma0)
    return np.array([gibbs_mean(inst, b, lam0, box, tol, mode, sigma0) for b in betas])


def sampled_bias(spec: ScenarioSpec, inst: OcpInstance, betas, center, workers: int = 1):
    """Single MPPI steps around ``center`` for each ``beta`` and seed.

    Returns ``(mean controls, mean within-run SE / sqrt(n_seeds), replicate SE)``.
    """
    cfg = spec.mppi_config(inst, workers)
    cov0 = cfg.initial_covariance(inst)
    seeds = spec.sweep["seeds"]
    means, se_within, se_rep = [], [], []
    for b in betas:
        steps = [
            standard_mppi_step(
                inst, center, cov0.scaled(b**2), b**2 * cfg.lambda0, cfg.samples, s, workers=workers
            )
            for s in seeds
        ]
        U = np.array([st.control for st in steps])
        means.append(U.mean(axis=0))
        se_within.append(np.mean([np.linalg.norm(st.std_error) for st in steps]) / np.sqrt(len(seeds)))
        spread = np.linalg.norm(U.std(axis=0, ddof=1)) if len(seeds) > 1 else np.nan
        se_rep.append(spread / np.sqrt(len(seeds)))
    return np.array(means), np.array(se_within), np.array(se_rep)


def cmd_bias_sweep(spec: ScenarioSpec, out_dir, workers: int = 1) -> BiasSweep:
    """Distance of the MPPI solution from the deterministic optimum as ``beta`` shrinks."""
    t0 = time.perf_counter()
    out = _out(out_dir)
    inst = spec.build_instance()
    mode = spec.sweep["mode"]
    betas = np.asarray(spec.sweep["beta_list"], dtype=float)
    chash = spec.config_hash()
    seed = None if mode == "exact" else int(spec.sweep["seeds"][0])
    rec = RunRecord(spec.name, "bias-sweep", chash, seed)
    ref = det_reference(spec, inst, _cache(out))
    lam0 = float(spec.solver["lambda0"])
    se = rep = None
    if mode == "exact":
        if inst.control_dim > 2:
            raise ContractViolation("exact mode needs N * n_u <= 2")
        controls = exact_bias(spec, inst, betas, lam0)
    elif mode == "sampled":
        controls, se, rep = sampled_bias(spec, inst, betas, ref.minimizer, workers)
    else:
        raise ContractViolation(f"mode must be 'exact' or 'sampled', got {mode!r}")
    err = np.linalg.norm(controls - ref.minimizer, axis=1)
    gap = np.array([value_of(inst, u) for u in controls]) - ref.value
    cfit, vfit = _fit_or_none(betas, err), _fit_or_none(betas, gap)

    rows = []
    for i, b in enumerate(betas):
        extra = ["", ""] if se is None else [se[i], rep[i]]
        rows.append([b, *controls[i], err[i], gap[i], *extra])
    header = ["beta", *_u_cols(inst), "control_error", "value_gap", "std_error", "replicate_se"]
    csv_path = rec.add(write_csv(out / f"bias_{spec.name}_{mode}.csv", header, rows, chash, seed))
    summary = {
        "scenario": spec.name,
        "mode": mode,
        "control_slope": None if cfit is None else cfit._asdict(),
        "value_slope": None if vfit is None else vfit._asdict(),
        "reference": {"minimizer": ref.minimizer, "value": ref.value, "tol": ref.tol},
    }
    rec.add(write_json(out / f"bias_{spec.name}_{mode}_summary.json", summary))
    rec.add(
        write_plot_script(
            out / f"bias_{spec.name}_{mode}_plot.py",
            f"suboptimality versus beta ({spec.name}, {mode})",
            f'd = load("{csv_path.name}")\n'
            'ax.loglog(d["beta"], d["control_error"], "o-", label="control error")\n'
            'ax.loglog(d["beta"], d["value_gap"], "s-", label="value gap")\n'
            'ax.set_xlabel("beta")',
        )
    )
    rec.wall_time = time.perf_counter() - t0
    if cfit is not None:
        rec.verdicts["control_slope"] = cfit.slope
    if vfit is not None:
        rec.verdicts["value_slope"] = vfit.slope
    rec.save(out)
    return BiasSweep(betas, controls, err, gap, se, rep, cfit, vfit, ref, rec)


# --- density curves ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PdfCurves:
    curves: dict
    record: RunRecord = field(repr=False)


def cmd_pdf_curve(spec: ScenarioSpec, out_dir, betas=None) -> PdfCurves:
    """Normalized optimal densities on the configured grid, one CSV per ``beta``."""
    t0 = time.perf_counter()
    out = _out(out_dir)
    inst = spec.build_instance()
    if inst.control_dim != 1:
        raise ContractViolation("pdf-curve needs a scalar decision variable")
    lo, hi, n = spec.sweep.get("pdf_grid", (-2.0, 2.0, 4001.0))
    grid = np.linspace(lo, hi, int(n))
    betas = spec.sweep.get("pdf_betas", (1.0, 0.5, 0.25, 0.125)) if betas is None else betas
    chash = spec.config_hash()
    rec = RunRecord(spec.name, "pdf-curve", chash, None)
    lam0 = float(spec.solver["lambda0"])
    curves, lines = {}, []
    for b in betas:
        c = optimal_density_curve(inst, float(b), grid, lam0)
        curves[float(b)] = c
        path = rec.add(
            write_csv(out / f"pdf_{spec.name}_beta{float(b)!r}.csv", ["w", "density"], zip(c.w, c.density), chash, None)
        )
        lines.append(f'd = load("{path.name}")\nax.plot(d["w"], d["density"], label="beta={float(b)!r}")')
    lines.append('ax.set_xlabel("W")\nax.set_ylabel("optimal density")')
    rec.add(write_plot_script(out / f"pdf_{spec.name}_plot.py", f"optimal densities ({spec.name})", "\n".join(lines)))
    rec.wall_time = time.perf_counter() - t0
    rec.save(out)
    return PdfCurves(curves, rec)


# --- oracle comparison ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Comparison:
    det: OracleSolution
    ols: OracleSolution
    cls: OracleSolution
    standard_u: np.ndarray
    standard_se: np.ndarray
    iterates: np.ndarray
    checks: dict
    record: RunRecord = field(repr=False)


def cmd_compare(spec: ScenarioSpec, out_dir, workers: int = 1) -> Comparison:
    """DET/OLS/CLS references next to standard MPPI and deterministic MPPI iterates."""
    t0 = time.perf_counter()
    out = _out(out_dir)
    inst = spec.build_instance()
    if inst.horizon != 2 or inst.dynamics.n_x != 1 or inst.n_u != 1:
        raise ContractViolation("compare needs a two-step scalar scenario")
    chash = spec.config_hash()
    cfg = spec.mppi_config(inst, workers)
    rec = RunRecord(spec.name, "compare", chash, cfg.seed)
    cache = _cache(out)
    det = det_reference(spec, inst, cache)
    ols = ols_reference(spec, inst, cache)
    cls = cls_reference(spec, inst, cache)
    cov0 = cfg.initial_covariance(inst)
    std = standard_mppi_step(inst, inst.zeros(), cov0, cfg.lambda0, cfg.samples, cfg.seed, workers=workers)
    report = deterministic_mppi_solve(inst, cfg)
    iterates = report.iterates

    rows = [
        ["det", *det.minimizer, det.value, det.tol, ""],
        ["ols", *ols.minimizer, ols.value, ols.tol, ""],
        ["cls", cls.u0[0], "", cls.value, cls.tol, ""],
        ["standard_mppi", *std.control, value_of(inst, std.control), "", std.std_error[0]],
    ]
    for h in report.history:
        rows.append([f"det_mppi_{h.j}", *h.control, value_of(inst, h.control), "", h.std_error[0]])
    header = ["label", "u0", "u1", "value", "tol", "std_error"]
    pts = rec.add(write_csv(out / f"compare_{spec.name}.csv", header, rows, chash, cfg.seed))
    pol = cls.policy
    pol_path = rec.add(
        write_csv(
            out / f"compare_{spec.name}_policy.csv",
            ["x1", "u1", "value"],
            zip(pol.states, pol.controls, pol.values),
            chash,
            cfg.seed,
        )
    )

    checks = {}
    if inst.dynamics.kind == "input_affine":
        band = 3.0 * (float(std.std_error[0]) + cls.tol)
        diff = abs(float(std.control[0]) - float(cls.u0[0]))
        checks["standard_mppi_matches_cls_u0"] = {"difference": diff, "band": band, "passed": diff <= band}
    else:
        diff = float(np.linalg.norm(iterates[-1] - det.minimizer))
        checks["det_mppi_endpoint_matches_det"] = {"difference": diff, "band": 1e-2, "passed": diff <= 1e-2}
    rec.add(
        write_json(
            out / f"compare_{spec.name}_summary.json",
            {
                "det": {"u": det.minimizer, "value": det.value, "tol": det.tol},
                "ols": {"u": ols.minimizer, "value": ols.value, "tol": ols.tol},
                "cls": {"u0": cls.u0, "value": cls.value, "tol": cls.tol},
                "standard_mppi": {"u": std.control, "std_error": std.std_error},
                "det_mppi_final": iterates[-1],
                "checks": checks,
            },
        )
    )
    rec.add(
        write_plot_script(
            out / f"compare_{spec.name}_plot.py",
            f"DET / OLS / CLS solutions and MPPI ({spec.name})",
            f'p = load("{pol_path.name}")\n'
            f'rows = load("{pts.name}")\n'
            'ax.plot([rows["u0"][2]] * len(p["u1"]), p["u1"], "-", lw=4, alpha=0.3, label="CLS (u0*, u1*(x1))")\n'
            'ax.plot(rows["u0"][4:], rows["u1"][4:], ".-", label="deterministic MPPI iterates")\n'
            'ax.plot(rows["u0"][:2], rows["u1"][:2], "o", label="DET, OLS")\n'
            'ax.plot(rows["u0"][3], rows["u1"][3], "x", label="standard MPPI")\n'
            'ax.set_xlabel("u0")\nax.set_ylabel("u1")',
        )
    )
    rec.wall_time = time.perf_counter() - t0
    rec.verdicts = {k: v["passed"] for k, v in checks.items()}
    rec.save(out)
    return Comparison(det, ols, cls, std.control, std.std_error, iterates, checks, rec)
