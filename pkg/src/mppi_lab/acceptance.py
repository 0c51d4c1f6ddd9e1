"""Acceptance suite: convergence orders, limits, oracle agreement and invariants.

Every criterion is a function of an :class:`AcceptanceContext` returning
``(passed, detail)``.  Seeds are pinned, stochastic comparisons use
3-standard-error bands, and a failing or crashing criterion never stops the
remaining ones.
"""

from __future__ import annotations

import math
import time
import traceback
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from mppi_lab.experiments import cls_reference, det_reference, exact_bias, ols_reference
from mppi_lab.oracles import det_ocp_oracle, find_mode, gibbs_mean, slope_fit
from mppi_lab.problem import (
    CostModel,
    DynamicsModel,
    OcpInstance,
    constant_matrix,
    overall_cost,
    to_canonical,
    value_of,
)
from mppi_lab.sampling import CovarianceSpec
from mppi_lab.scenarios import ScenarioSpec, get_scenario, quartic_objective
from mppi_lab.solver import deterministic_mppi_solve, softmin_weights, standard_mppi_step

SWEEP_BETAS = tuple(float(b) for b in np.geomspace(0.02, 0.2, 8))
LAPLACE_PREFACTOR = -144.0 / 512.0


@dataclass
class AcceptanceContext:
    """Scenario specs used by the criteria plus memoized shared computations."""

    specs: dict[str, ScenarioSpec] = field(default_factory=dict)
    workers: int = 1

    def spec(self, name: str) -> ScenarioSpec:
        return self.specs.get(name) or get_scenario(name)

    def instance(self, name: str) -> OcpInstance:
        return self.spec(name).build_instance()

    @cached_property
    def quartic_sweep(self) -> dict:
        spec = self.spec("quartic").merged(solver__lambda0=1.0)
        inst = spec.build_instance()
        t0 = time.perf_counter()
        ref = det_reference(spec, inst)
        controls = exact_bias(spec, inst, SWEEP_BETAS, 1.0)
        err = np.linalg.norm(controls - ref.minimizer, axis=1)
        gap = np.array([value_of(inst, u) for u in controls]) - ref.value
        cfit = slope_fit(list(zip(SWEEP_BETAS, err)))
        vfit = slope_fit(list(zip(SWEEP_BETAS, gap)))
        return {"control": cfit, "value": vfit, "elapsed": time.perf_counter() - t0}


class Criterion:
    def __init__(self, key: str, group: str, title: str, fn: Callable[[AcceptanceContext], tuple[bool, str]]):
        self.key, self.group, self.title, self.fn = key, group, title, fn


@dataclass(frozen=True)
class CriterionResult:
    key: str
    group: str
    title: str
    passed: bool
    detail: str
    elapsed: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} [{self.key}] {self.title} :: {self.detail}"


CRITERIA: list[Criterion] = []


def criterion(key: str, group: str, title: str):
    def register(fn):
        CRITERIA.append(Criterion(key, group, title, fn))
        return fn

    return register


# --- orders -----------------------------------------------------------------


@criterion("slopes.control", "slopes", "quartic exact sweep: control-bias slope in [1.9, 2.1] within 30 s")
def _slope_control(ctx: AcceptanceContext):
    s = ctx.quartic_sweep
    fit = s["control"]
    ok = 1.9 <= fit.slope <= 2.1 and s["elapsed"] < 30.0
    return ok, f"slope={fit.slope:.4f} rms={fit.residual:.3g} n={fit.n_used} time={s['elapsed']:.2f}s"


@criterion("slopes.value", "slopes", "quartic exact sweep: value-gap slope in [3.8, 4.2]")
def _slope_value(ctx: AcceptanceContext):
    s = ctx.quartic_sweep
    fit = s["value"]
    ok = 3.8 <= fit.slope <= 4.2 and s["elapsed"] < 30.0
    return ok, f"slope={fit.slope:.4f} rms={fit.residual:.3g} n={fit.n_used} time={s['elapsed']:.2f}s"


@criterion("laplace", "laplace", "quartic: gibbs_mean(beta)/beta^2 within 5% of -0.28125 for beta <= 0.05")
def _laplace(ctx: AcceptanceContext):
    inst = ctx.spec("quartic").merged(solver__lambda0=1.0).build_instance()
    mode = find_mode(inst, lam0=1.0)
    betas = (0.05, 0.04, 0.03, 0.02, 0.01, 0.005)
    ratios = [gibbs_mean(inst, b, 1.0, mode=mode)[0] / b**2 for b in betas]
    rel = [abs(r / LAPLACE_PREFACTOR - 1.0) for r in ratios]
    detail = ", ".join(f"{b:g}:{r:.5f}" for b, r in zip(betas, ratios))
    return max(rel) <= 0.05, f"ratios {detail}; worst rel dev {max(rel):.2%}"


# --- limits -----------------------------------------------------------------


@criterion("limit.quartic", "limit", "quartic: exact MPPI solution at beta=1e-3 within 1e-5 of DET")
def _limit_quartic(ctx: AcceptanceContext):
    spec = ctx.spec("quartic")
    inst = spec.build_instance()
    ref = det_reference(spec, inst)
    u = exact_bias(spec, inst, [1e-3], float(spec.solver["lambda0"]))[0]
    err = float(np.linalg.norm(u - ref.minimizer))
    return err <= 1e-5, f"|U(1e-3) - U*_det| = {err:.3e}"


@criterion(
    "limit.arctan2",
    "limit",
    "arctan2 at beta=1e-3: exact within 1e-4 of DET; sampled (M=1e6) within 1e-4 + 3 SE",
)
def _limit_arctan(ctx: AcceptanceContext):
    spec = ctx.spec("arctan2")
    inst = spec.build_instance()
    ref = det_reference(spec, inst)
    lam0 = float(spec.solver["lambda0"])
    beta = 1e-3
    exact = exact_bias(spec, inst, [beta], lam0)[0]
    e_exact = float(np.linalg.norm(exact - ref.minimizer))
    cov0 = spec.mppi_config(inst).initial_covariance(inst)
    # proposal centred on the reference; the importance correction keeps the target
    step = standard_mppi_step(
        inst, ref.minimizer, cov0.scaled(beta**2), beta**2 * lam0, 1_000_000, 11, workers=ctx.workers
    )
    e_samp = float(np.linalg.norm(step.control - ref.minimizer))
    se = float(np.linalg.norm(step.std_error))
    ok = e_exact <= 1e-4 and e_samp <= 1e-4 + 3.0 * se
    return ok, f"exact err {e_exact:.3e}; sampled err {e_samp:.3e} (SE {se:.2e})"


# --- Algorithm-level behaviour ----------------------------------------------


@criterion("qlinear", "qlinear", "arctan2 deterministic MPPI: ratios in [0.3, 0.7] above 10x noise floor, final <= 1e-2, < 60 s")
def _qlinear(ctx: AcceptanceContext):
    spec = ctx.spec("arctan2").merged(solver__iterations=10, solver__samples=100_000, solver__seed=0)
    spec = spec.merged(solver__shrink_factor=math.sqrt(2.0) / 2.0)
    inst = spec.build_instance()
    ref = det_reference(spec, inst)
    t0 = time.perf_counter()
    report = deterministic_mppi_solve(inst, spec.mppi_config(inst, ctx.workers))
    elapsed = time.perf_counter() - t0
    err = np.array([np.linalg.norm(h.control - ref.minimizer) for h in report.history])
    floor = np.array([np.linalg.norm(h.std_error) for h in report.history])
    used = [j for j in range(len(err) - 1) if err[j] > 10.0 * floor[j]]
    ratios = [err[j + 1] / err[j] for j in used]
    ok = bool(ratios) and all(0.3 <= r <= 0.7 for r in ratios) and err[-1] <= 1e-2 and elapsed < 60.0
    shown = ", ".join(f"{r:.3f}" for r in ratios)
    return ok, f"ratios [{shown}] over {len(ratios)} iterations; final err {err[-1]:.3e}; time {elapsed:.2f}s"


@criterion("affine_cls", "affine-cls", "affine2: standard MPPI u0 (I=1, M=1e6) within 3(SE + tol) of the CLS oracle u0")
def _affine_cls(ctx: AcceptanceContext):
    spec = ctx.spec("affine2")
    inst = spec.build_instance()
    cls = cls_reference(spec, inst)
    cfg = spec.mppi_config(inst, ctx.workers)
    cov0 = cfg.initial_covariance(inst)
    step = standard_mppi_step(inst, inst.zeros(), cov0, cfg.lambda0, 1_000_000, 5, workers=ctx.workers)
    se = float(step.std_error[0])
    diff = abs(float(step.control[0]) - float(cls.u0[0]))
    band = 3.0 * (se + cls.tol)
    return diff <= band, (
        f"MPPI u0={step.control[0]:.5f} (SE {se:.1e}) CLS u0={cls.u0[0]:.5f} (tol {cls.tol:.1e}); "
        f"|diff|={diff:.4f} band={band:.4f}"
    )


@criterion("certainty", "certainty", "lq1: DET, OLS and CLS first controls agree within 1e-6")
def _certainty(ctx: AcceptanceContext):
    spec = ctx.spec("lq1")
    inst = spec.build_instance()
    u = {
        "det": float(det_reference(spec, inst).minimizer[0]),
        "ols": float(ols_reference(spec, inst).minimizer[0]),
        "cls": float(cls_reference(spec, inst).u0[0]),
    }
    spread = max(u.values()) - min(u.values())
    return spread <= 1e-6, ", ".join(f"{k}={v:.9f}" for k, v in u.items()) + f"; spread {spread:.1e}"


@criterion("importance", "importance", "quartic beta=0.5: corrected estimate at U=0.3 matches U=0 within 3 combined SE (20 seeds)")
def _importance(ctx: AcceptanceContext):
    spec = ctx.spec("quartic")
    inst = spec.build_instance()
    cfg = spec.mppi_config(inst)
    beta = 0.5
    cov = cfg.initial_covariance(inst).scaled(beta**2)
    lam = beta**2 * cfg.lambda0

    def replicate(center: float, seeds) -> np.ndarray:
        return np.array(
            [
                standard_mppi_step(inst, [center], cov, lam, 100_000, s, workers=ctx.workers).control[0]
                for s in seeds
            ]
        )

    shifted = replicate(0.3, range(0, 20))
    plain = replicate(0.0, range(100, 120))
    se = math.hypot(shifted.std(ddof=1) / math.sqrt(20), plain.std(ddof=1) / math.sqrt(20))
    diff = abs(shifted.mean() - plain.mean())
    return diff <= 3.0 * se, f"shifted {shifted.mean():.6f} plain {plain.mean():.6f} |diff|={diff:.2e} 3SE={3 * se:.2e}"


@criterion("canonical", "canonical", "B=1, R=4, G=1, lambda=4: matched original/canonical costs agree to 1e-10 (1000 trajectories)")
def _canonical(ctx: AcceptanceContext):
    one = constant_matrix(1.0)
    dyn = DynamicsModel.input_affine(1, 1, 1, lambda x: x - 0.5 * np.sin(3.0 * x), one, one)
    cost = CostModel(lambda x: 0.5 * x[..., 0] ** 2 + np.cos(x[..., 0]), 4.0, lambda x: 0.5 * x[..., 0] ** 2)
    lam, N = 4.0, 3
    form = to_canonical(dyn, cost, lam)
    orig = OcpInstance(dyn, cost, N, [0.0], CovarianceSpec.isotropic(1.0, 1, N), lam)
    canon = OcpInstance(form.dynamics, form.cost, N, [0.0], CovarianceSpec.isotropic(lam, 1, N), lam)
    rng = np.random.default_rng(20240601)
    worst = 0.0
    for _ in range(1000):
        x0 = rng.uniform(-1.5, 1.5, 1)
        U, W = rng.normal(size=N), rng.normal(size=N)
        Ub, Wb = form.match_trajectory(x0, U, W)
        a = overall_cost(OcpInstance(dyn, cost, N, x0, orig.sigma, lam), U, W)
        b = overall_cost(OcpInstance(form.dynamics, form.cost, N, x0, canon.sigma, lam), Ub, Wb)
        worst = max(worst, abs(float(a) - float(b)))
    bbar = float(form.dynamics.B(np.zeros(1))[0, 0])
    return worst <= 1e-10 and abs(bbar - 0.5) < 1e-15, f"max |J - J_bar| = {worst:.2e}; Bbar = {bbar}"


# --- property suites --------------------------------------------------------


@criterion("properties.normalization", "properties", "weights sum to 1 within 1e-12 at every iteration")
def _normalization(ctx: AcceptanceContext):
    worst = 0.0
    for name in ("quartic", "affine2", "arctan2"):
        spec = ctx.spec(name).merged(solver__samples=20_000, solver__iterations=12)
        inst = spec.build_instance()
        report = deterministic_mppi_solve(inst, spec.mppi_config(inst, ctx.workers))
        worst = max(worst, max(abs(h.weight_sum - 1.0) for h in report.history))
    return worst <= 1e-12, f"max |sum(w) - 1| = {worst:.1e}"


@criterion("properties.offset", "properties", "softmin weights bit-identical under exactly representable cost shifts")
def _offset(ctx: AcceptanceContext):
    rng = np.random.default_rng(7)
    # dyadic costs keep S + c exact, so psi-subtraction returns identical differences
    costs = rng.integers(0, 2**20, size=4096) / 2.0**10
    base = softmin_weights(costs, 3.0).weights
    shifts = (1.0, -37.0, 2.0**20, 0.5, -(2.0**-10))
    same = all(np.array_equal(softmin_weights(costs + c, 3.0).weights, base) for c in shifts)
    return same, f"{len(shifts)} shifts, bit-identical={same}"


@criterion("properties.workers", "properties", "solve reports bit-identical across 1, 4 and 16 workers")
def _workers(ctx: AcceptanceContext):
    spec = ctx.spec("arctan2").merged(solver__samples=50_000, solver__iterations=4, solver__seed=3)
    inst = spec.build_instance()
    runs = [deterministic_mppi_solve(inst, spec.mppi_config(inst, w)) for w in (1, 4, 16)]
    same = all(
        np.array_equal(r.iterates, runs[0].iterates) and r.value == runs[0].value for r in runs[1:]
    )
    return same, f"iterates identical={same}; final={runs[0].solution.tolist()}"


@criterion("properties.refinement", "properties", "DET oracle: halving grid spacing moves the minimizer by less than the certified tolerance")
def _refinement(ctx: AcceptanceContext):
    parts, ok = [], True
    for name in ("quartic", "affine2", "arctan2", "lq1"):
        spec = ctx.spec(name)
        inst = spec.build_instance()
        a = det_ocp_oracle(inst, spec.box, 401)
        b = det_ocp_oracle(inst, spec.box, 801)
        move = float(np.max(np.abs(a.minimizer - b.minimizer)))
        tol = max(a.tol, b.tol)
        ok &= move <= tol
        parts.append(f"{name}: {move:.1e}<={tol:.1e}")
    return ok, "; ".join(parts)


@criterion("landscape", "landscape", "quartic: DET minimizer 0 with value 0; secondary minimum 1/4 at U=-1/2")
def _landscape(ctx: AcceptanceContext):
    spec = ctx.spec("quartic")
    inst = spec.build_instance()
    ref = det_reference(spec, inst)
    local = det_ocp_oracle(inst, (-0.7, -0.45), 201)
    ok = (
        abs(ref.minimizer[0]) <= max(ref.tol, 1e-9)
        and abs(ref.value) <= 1e-12
        and abs(local.minimizer[0] + 0.5) <= max(local.tol, 1e-7)
        and abs(local.value - 0.25) <= 1e-10
    )
    p = spec.problem
    peak = float(quartic_objective(-0.4, p.get("c2", 16.0), p.get("c3", 144.0), p.get("c4", 480.0)))
    return ok, (
        f"U*={ref.minimizer[0]:.2e} V={ref.value:.2e}; local min {local.minimizer[0]:.7f} "
        f"value {local.value:.10f}; J(-0.4)={peak:.6f}"
    )


# --- runner -----------------------------------------------------------------


@dataclass(frozen=True)
class AcceptanceReport:
    results: tuple[CriterionResult, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "criteria": [r.__dict__ for r in self.results],
        }


def groups() -> list[str]:
    return sorted({c.group for c in CRITERIA})


def select(only: str | None = None) -> list[Criterion]:
    """Criteria whose group or key matches one of the comma-separated names in ``only``."""
    if not only:
        return list(CRITERIA)
    names = {n.strip() for n in only.split(",") if n.strip()}
    picked = [c for c in CRITERIA if c.group in names or c.key in names]
    if not picked:
        raise KeyError(f"no criteria match {sorted(names)}; groups: {', '.join(groups())}")
    return picked


def run_criterion(c: Criterion, ctx: AcceptanceContext) -> CriterionResult:
    t0 = time.perf_counter()
    try:
        ok, detail = c.fn(ctx)
    except Exception as exc:  # a crashing criterion is a failing criterion
        ok, detail = False, f"error: {type(exc).__name__}: {exc} | {traceback.format_exc(limit=1).splitlines()[-1]}"
    return CriterionResult(c.key, c.group, c.title, bool(ok), detail, time.perf_counter() - t0)


def run_acceptance(
    only: str | None = None, ctx: AcceptanceContext | None = None, echo: Callable[[str], None] | None = print
) -> AcceptanceReport:
    ctx = ctx or AcceptanceContext()
    results = []
    for c in select(only):
        r = run_criterion(c, ctx)
        results.append(r)
        if echo is not None:
            echo(r.line())
    return AcceptanceReport(tuple(results))


__all__ = [
    "AcceptanceContext",
    "AcceptanceReport",
    "CRITERIA",
    "CriterionResult",
    "groups",
    "run_acceptance",
    "run_criterion",
    "select",
]
