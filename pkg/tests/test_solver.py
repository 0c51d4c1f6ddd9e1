import logging
import math

import numpy as np
import pytest
from conftest import ONE, linear_instance

from mppi_lab.errors import ContractViolation, NoValidSamplesError, TransformationInvalidError
from mppi_lab.oracles import cls_ocp_oracle, det_ocp_oracle, find_mode, gibbs_mean
from mppi_lab.problem import CostModel, DynamicsModel, OcpInstance, value_of
from mppi_lab.sampling import CovarianceSpec, draw_batch
from mppi_lab.scenarios import build_two_step, get_scenario
from mppi_lab.solver import (
    MppiConfig,
    cls_mppi_u0,
    deterministic_mppi_solve,
    softmin_weights,
    standard_mppi_step,
)

NU = math.sqrt(2.0) / 2.0


# --- softmin ----------------------------------------------------------------


def test_equal_costs_give_uniform_weights():
    for lam in (1e-3, 1.0, 1e6):
        np.testing.assert_array_equal(softmin_weights([3.2] * 4, lam).weights, [0.25] * 4)


def test_dominant_sample_takes_all_weight():
    wv = softmin_weights([0.0, 1e6], 1.0)
    assert wv.weights[0] == 1.0
    assert wv.weights[1] < 1e-300


def test_log_two_gap_gives_two_thirds():
    lam = 0.7
    np.testing.assert_allclose(softmin_weights([0.0, lam * math.log(2.0)], lam).weights, [2 / 3, 1 / 3], rtol=1e-15)


def test_offset_and_normalizer():
    wv = softmin_weights([5.0, 4.0, 6.0], 2.0)
    assert wv.offset == 4.0
    assert wv.normalizer == pytest.approx(1 + math.exp(-0.5) + math.exp(-1.0))
    assert wv.weights.sum() == pytest.approx(1.0, abs=1e-15)


def test_constant_shift_invariance():
    costs = np.array([1.0, 2.5, 0.25, 7.0])
    base = softmin_weights(costs, 1.3).weights
    np.testing.assert_array_equal(softmin_weights(costs + 64.0, 1.3).weights, base)


def test_non_finite_costs_are_dropped_and_counted():
    wv = softmin_weights([np.inf, 1.0, np.nan, 1.0], 1.0)
    np.testing.assert_array_equal(wv.weights, [0.0, 0.5, 0.0, 0.5])
    assert wv.n_rejected == 2


def test_all_non_finite_raises():
    with pytest.raises(NoValidSamplesError):
        softmin_weights([np.inf, np.nan], 1.0)


def test_nonpositive_lambda_raises():
    with pytest.raises(ContractViolation):
        softmin_weights([1.0, 2.0], 0.0)


def test_weight_statistics():
    wv = softmin_weights([0.0] * 10, 1.0)
    assert wv.ess == pytest.approx(10.0)
    assert wv.entropy == pytest.approx(math.log(10.0))
    assert wv.max_weight == pytest.approx(0.1)


# --- standard step ----------------------------------------------------------


def test_huge_temperature_gives_sample_mean(quartic):
    cov = CovarianceSpec.isotropic(1.0, 1, 1)
    M = 100_000
    step = standard_mppi_step(quartic, [0.0], cov, 1e12, M, 4)
    mean = draw_batch(cov, M, 4).noises.mean(axis=0)
    np.testing.assert_allclose(step.control, mean, atol=1e-9)
    assert abs(step.control[0]) <= 4.0 / math.sqrt(M)


def test_quartic_step_matches_gibbs_mean(quartic):
    step = standard_mppi_step(quartic, [0.0], quartic.sigma, 1.0, 100_000, 21)
    exact = gibbs_mean(quartic, 1.0)
    assert abs(step.control[0] - exact[0]) <= 3.0 * step.std_error[0]


def test_symmetric_forced_pair_gives_zero_update():
    inst = linear_instance(horizon=1, terminal=lambda x: x[..., 0] ** 2)
    W = np.array([[0.37], [-0.37]])
    step = standard_mppi_step(inst, [0.0], inst.sigma, 1.0, 2, 0, forced_noise=W)
    np.testing.assert_array_equal(step.weights.weights, [0.5, 0.5])
    assert step.control[0] == 0.0


def test_step_validation(arctan2):
    with pytest.raises(ContractViolation):
        standard_mppi_step(arctan2, [0.0], arctan2.sigma, 1.0, 10, 0)
    with pytest.raises(ContractViolation):
        standard_mppi_step(arctan2, [0.0, 0.0], arctan2.sigma, 1.0, 0, 0)


def test_step_importance_correction_keeps_target(quartic):
    cov = quartic.sigma.with_beta(0.5)
    lam = 0.25
    a = [standard_mppi_step(quartic, [0.3], cov, lam, 50_000, s).control[0] for s in range(10)]
    b = [standard_mppi_step(quartic, [0.0], cov, lam, 50_000, 50 + s).control[0] for s in range(10)]
    se = math.hypot(np.std(a, ddof=1), np.std(b, ddof=1)) / math.sqrt(10)
    assert abs(np.mean(a) - np.mean(b)) <= 3 * se


# --- deterministic MPPI -----------------------------------------------------


def test_config_validation():
    with pytest.raises(ContractViolation):
        MppiConfig(samples=1)
    with pytest.raises(ContractViolation):
        MppiConfig(shrink_factor=1.0)
    with pytest.raises(ContractViolation):
        MppiConfig(shrink_factor=0.0)
    with pytest.raises(ContractViolation):
        MppiConfig(lambda0=0.0)
    with pytest.raises(ContractViolation):
        MppiConfig(iterations=0)


def test_default_covariance_is_lambda_over_r():
    inst = linear_instance(horizon=2, R=4.0)
    cov = MppiConfig(lambda0=2.0).initial_covariance(inst)
    np.testing.assert_allclose(cov.step_covariance, [[0.5]])
    assert cov.horizon == 2


def test_quartic_converges_to_global_minimum(quartic):
    cfg = MppiConfig(samples=100_000, iterations=12, shrink_factor=NU, init_control=(0.6,), seed=2)
    report = deterministic_mppi_solve(quartic, cfg)
    assert abs(report.solution[0]) <= 5e-3


def test_arctan_converges_to_det_reference(arctan2):
    ref = det_ocp_oracle(arctan2)
    report = deterministic_mppi_solve(arctan2, MppiConfig(samples=100_000, iterations=10, seed=0))
    assert np.linalg.norm(report.solution - ref.minimizer) <= 1e-2


def test_single_iteration_is_standard_step(affine2):
    cfg = MppiConfig(samples=5_000, iterations=1, seed=9)
    report = deterministic_mppi_solve(affine2, cfg)
    step = standard_mppi_step(affine2, affine2.zeros(), cfg.initial_covariance(affine2), 1.0, 5_000, 9)
    np.testing.assert_array_equal(report.solution, step.control)


def test_history_and_recomputed_value(arctan2):
    report = deterministic_mppi_solve(arctan2, MppiConfig(samples=4_000, iterations=6, seed=1))
    betas = [h.beta for h in report.history]
    assert len(report.history) == 6
    assert all(b1 < b0 for b0, b1 in zip(betas, betas[1:]))
    assert betas == pytest.approx([NU**j for j in range(6)])
    assert all(h.lam == pytest.approx(h.beta**2) for h in report.history)
    assert report.value == value_of(arctan2, report.solution)
    assert set(report.diagnostics) >= {"weight_entropy", "max_weight", "rejected_samples"}


def test_low_effective_sample_size_warns(quartic, caplog):
    cfg = MppiConfig(samples=1_000, iterations=1, lambda0=1e-4, sigma0=CovarianceSpec.isotropic(1.0, 1, 1))
    with caplog.at_level(logging.WARNING, logger="mppi_lab.solver"):
        report = deterministic_mppi_solve(quartic, cfg)
    assert "effective sample size" in caplog.text
    assert report.diagnostics["low_ess_iterations"] == [0]


def test_solve_counts_rejected_samples():
    dyn = DynamicsModel(1, 1, 1, step=lambda x, u, w: x + np.where(u + w > 2.0, np.inf, u + w))
    inst = OcpInstance(dyn, CostModel(lambda x: x[..., 0] ** 2), 1, [0.0], CovarianceSpec.isotropic(1.0, 1, 1), 1.0)
    report = deterministic_mppi_solve(inst, MppiConfig(samples=20_000, iterations=2))
    assert report.diagnostics["rejected_samples"] > 0
    assert np.isfinite(report.solution).all()


def test_exact_iterates_descend_in_value(quartic):
    mode = find_mode(quartic)
    values = []
    for j in range(30):
        beta = NU**j
        if beta <= 0.25:
            values.append(value_of(quartic, gibbs_mean(quartic, beta, mode=mode)))
    assert len(values) > 10
    assert all(v1 <= v0 + 1e-6 for v0, v1 in zip(values, values[1:]))


# --- closed-loop first control ----------------------------------------------


def test_cls_u0_symmetric_problem_is_zero():
    inst = linear_instance(horizon=2, terminal=lambda x: x[..., 0] ** 6)
    est = cls_mppi_u0(inst, 200_000, 3)
    assert abs(est.u0[0]) <= 3.0 * est.std_error[0]


def test_cls_u0_equals_standard_step_component(affine2):
    est = cls_mppi_u0(affine2, 20_000, 17)
    step = standard_mppi_step(affine2, affine2.zeros(), affine2.sigma, affine2.lam, 20_000, 17)
    assert est.u0[0] == step.control[0]
    assert est.std_error[0] == step.std_error[0]


def test_cls_u0_matches_cls_oracle_on_affine_scenario(affine2):
    est = cls_mppi_u0(affine2, 1_000_000, 5)
    ref = cls_ocp_oracle(affine2)
    assert abs(est.u0[0] - ref.u0[0]) <= 3.0 * (est.std_error[0] + ref.tol)


def test_cls_u0_runs_in_canonical_coordinates():
    dyn = DynamicsModel.input_affine(1, 1, 1, lambda x: x - 0.5 * np.sin(3 * x), ONE, ONE)
    cost = CostModel(lambda x: (x[..., 0] - 1.0) ** 6 + x[..., 0], 4.0)
    inst = OcpInstance(dyn, cost, 2, [-1.0], CovarianceSpec.isotropic(1.0, 1, 2), 4.0)
    est = cls_mppi_u0(inst, 50_000, 8)
    # same Gibbs distribution sampled directly in the original coordinates
    direct = standard_mppi_step(inst, inst.zeros(), CovarianceSpec.isotropic(1.0, 1, 2), 4.0, 50_000, 8)
    assert est.u0[0] == pytest.approx(direct.control[0], abs=1e-12)


def test_cls_u0_rejects_violated_assumption():
    inst = linear_instance(horizon=2, terminal=lambda x: x[..., 0] ** 2, lam=2.0)
    with pytest.raises(TransformationInvalidError):
        cls_mppi_u0(inst, 1_000, 0)


def test_cls_u0_rejects_general_dynamics(arctan2):
    with pytest.raises(Exception) as info:
        cls_mppi_u0(arctan2, 1_000, 0)
    assert "input-affine" in str(info.value)


def test_symmetric_two_step_all_zero():
    inst = build_two_step("affine", x0=0.0, terminal="sym6")
    est = cls_mppi_u0(inst, 200_000, 1)
    assert abs(est.u0[0]) <= 3.0 * est.std_error[0]


def test_scenario_config_builds_solver_config():
    spec = get_scenario("arctan2")
    cfg = spec.mppi_config()
    assert cfg.samples == 100_000 and cfg.iterations == 10
    assert cfg.shrink_factor == NU and cfg.lambda0 == 1.0 and cfg.sigma0 is None
