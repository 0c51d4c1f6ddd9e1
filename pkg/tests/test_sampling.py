import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from mppi_lab.errors import ContractViolation, CovarianceInvalidError
from mppi_lab.sampling import (
    BLOCK_SIZE,
    CovarianceSpec,
    draw_batch,
    draw_sample,
    importance_correction,
    log_density,
)


def test_standard_normal_moments():
    batch = draw_batch(CovarianceSpec.isotropic(1.0, 1, 1), 100_000, 42)
    w = batch.noises[:, 0]
    assert abs(w.mean()) <= 0.0127
    assert 0.98 <= w.var() <= 1.02


def test_zero_scale_is_rejected():
    with pytest.raises(CovarianceInvalidError):
        CovarianceSpec.isotropic(1.0, 1, 1).with_beta(0.0)
    with pytest.raises(CovarianceInvalidError):
        CovarianceSpec(np.array([[1.0]]), 1, scale=0.0)


def test_non_pd_sigma_is_rejected():
    with pytest.raises(CovarianceInvalidError):
        CovarianceSpec(np.array([[1.0, 2.0], [2.0, 1.0]]), 1)
    with pytest.raises(CovarianceInvalidError):
        CovarianceSpec(np.array([[1.0, 0.5], [0.0, 1.0]]), 1)


def test_same_seed_same_batch():
    cov = CovarianceSpec.isotropic(1.0, 1, 2)
    a, b = draw_batch(cov, 4, 7), draw_batch(cov, 4, 7)
    assert a.noises.tobytes() == b.noises.tobytes()
    assert not np.array_equal(a.noises, draw_batch(cov, 4, 8).noises)


def test_sample_depends_only_on_seed_and_index():
    cov = CovarianceSpec.isotropic(2.0, 1, 2)
    big = draw_batch(cov, BLOCK_SIZE + 100, 3).noises
    small = draw_batch(cov, 10, 3).noises
    np.testing.assert_array_equal(big[:10], small)
    for m in (0, 9, BLOCK_SIZE - 1, BLOCK_SIZE, BLOCK_SIZE + 99):
        np.testing.assert_array_equal(draw_sample(cov, 3, m), big[m])


def test_iterations_use_distinct_streams():
    cov = CovarianceSpec.isotropic(1.0, 1, 1)
    assert not np.array_equal(draw_batch(cov, 8, 1, iteration=0).noises, draw_batch(cov, 8, 1, iteration=1).noises)


def test_worker_count_does_not_change_batch():
    cov = CovarianceSpec.isotropic(1.0, 2, 3)
    ref = draw_batch(cov, 3 * BLOCK_SIZE + 5, 11, workers=1).noises
    for w in (4, 16):
        assert draw_batch(cov, 3 * BLOCK_SIZE + 5, 11, workers=w).noises.tobytes() == ref.tobytes()


def test_batch_is_read_only():
    batch = draw_batch(CovarianceSpec.isotropic(1.0, 1, 1), 4, 0)
    with pytest.raises(ValueError):
        batch.noises[0, 0] = 1.0


def test_batch_validation():
    cov = CovarianceSpec.isotropic(1.0, 1, 1)
    with pytest.raises(ContractViolation):
        draw_batch(cov, 0, 0)
    with pytest.raises(ContractViolation):
        draw_batch(cov, 4, -1)


def test_cholesky_consistent_with_covariance():
    sigma = np.array([[2.0, 0.3], [0.3, 0.5]])
    cov = CovarianceSpec(sigma, 3, scale=0.25)
    L = cov.cholesky
    np.testing.assert_allclose(L @ L.T, 0.25 * sigma, atol=1e-12)


def test_scaled_batch_covariance():
    sigma = np.array([[2.0, 0.3], [0.3, 0.5]])
    cov = CovarianceSpec(sigma, 2).with_beta(0.5)
    W = draw_batch(cov, 200_000, 5).noises
    emp = np.cov(W.T)
    lifted = np.kron(np.eye(2), 0.25 * sigma)
    np.testing.assert_allclose(emp, lifted, atol=0.01)


def test_sample_covariance_error_shrinks_at_root_m_rate():
    cov = CovarianceSpec.isotropic(1.0, 1, 1)

    def rms_error(M):
        errs = [draw_batch(cov, M, s).noises[:, 0].var() - 1.0 for s in range(60)]
        return math.sqrt(np.mean(np.square(errs)))

    ratio = rms_error(2_000) / rms_error(8_000)
    assert 1.5 <= ratio <= 2.7


def test_to_csv_columns(tmp_path):
    batch = draw_batch(CovarianceSpec.isotropic(1.0, 2, 3), 2, 9)
    path = batch.to_csv(tmp_path / "batch.csv", n_w=2)
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed=9 iteration=0"
    assert lines[1] == "m,k,component,value"
    assert len(lines) == 2 + 2 * 3 * 2
    m, k, i, v = lines[2 + 5].split(",")
    assert (int(m), int(k), int(i)) == (0, 2, 1)
    assert float(v) == batch.noises[0, 5]


# --- densities --------------------------------------------------------------


def test_log_density_standard_normal_at_zero():
    cov = CovarianceSpec.isotropic(1.0, 1, 1)
    assert log_density(cov, [0.0], [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    assert log_density(cov, [0.0], [0.0]) == pytest.approx(-0.918939, abs=5e-7)


def test_log_density_translation_invariant():
    cov = CovarianceSpec.isotropic(1.0, 1, 1)
    assert log_density(cov, [1.7], [1.7]) == log_density(cov, [0.0], [0.0])


def test_log_density_scaled_variance():
    cov = CovarianceSpec.isotropic(4.0, 1, 1)
    expected = -0.5 * math.log(8 * math.pi) - 0.5
    assert log_density(cov, [0.0], [2.0]) == pytest.approx(expected, abs=1e-14)
    assert expected == pytest.approx(-2.112086, abs=5e-7)


def test_log_density_matches_dense_multivariate_normal(rng):
    sigma = np.array([[1.5, -0.4], [-0.4, 0.8]])
    cov = CovarianceSpec(sigma, 3, scale=0.7)
    dense = np.kron(np.eye(3), 0.7 * sigma)
    mean = rng.normal(size=6)
    W = rng.normal(size=(5, 6))
    np.testing.assert_allclose(log_density(cov, mean, W), multivariate_normal(mean, dense).logpdf(W), rtol=1e-12)


# --- importance correction --------------------------------------------------


def test_correction_vanishes_for_zero_mean_or_zero_noise(rng):
    cov = CovarianceSpec.isotropic(1.3, 1, 2)
    assert importance_correction(cov, 2.0, np.zeros(2), rng.normal(size=2)) == 0.0
    assert importance_correction(cov, 2.0, rng.normal(size=2), np.zeros(2)) == 0.0


def test_correction_scalar_example():
    cov = CovarianceSpec.isotropic(1.0, 1, 1)
    assert importance_correction(cov, 2.0, [3.0], [0.5]) == 3.0


def test_correction_requires_positive_lambda():
    with pytest.raises(ContractViolation):
        importance_correction(CovarianceSpec.isotropic(1.0, 1, 1), 0.0, [1.0], [1.0])


def test_correction_beta_factors_cancel(rng):
    sigma0 = np.array([[2.0, 0.5], [0.5, 1.0]])
    cov0 = CovarianceSpec(sigma0, 2)
    U, W = rng.normal(size=4), rng.normal(size=4)
    base = importance_correction(cov0, 1.5, U, W)
    explicit = 1.5 * W @ np.linalg.solve(np.kron(np.eye(2), sigma0), U)
    assert base == pytest.approx(explicit, rel=1e-12)
    for beta in (0.5, 0.1, 0.01):
        scaled = importance_correction(cov0.with_beta(beta), beta**2 * 1.5, U, W)
        assert scaled == pytest.approx(base, rel=1e-12)
