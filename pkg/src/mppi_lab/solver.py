r"""Softmin weighting, single-shot MPPI, and deterministic MPPI with a shrinking schedule.

One MPPI step estimates the mean of the Gibbs distribution

.. math:: q^*(W) \propto \exp(-S(W)/\lambda)\, p_{\bar\Sigma}(W)

by self-normalized importance sampling around the current mean
:math:`\hat U`.  The deterministic variant repeats the step with
:math:`\beta = \nu^j`, :math:`\lambda = \beta^2 \lambda_0`,
:math:`\bar\Sigma = \beta^2 \bar\Sigma_0`, which drives the iterate toward the
deterministic minimizer of :math:`J(U, 0)`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from mppi_lab.errors import ContractViolation, NoValidSamplesError
from mppi_lab.problem import (
    OcpInstance,
    check_assumption1,
    path_cost_batch,
    to_canonical,
    value_of,
)
from mppi_lab.sampling import CovarianceSpec, draw_block, importance_correction, map_blocks

log = logging.getLogger(__name__)

ESS_WARN_FRACTION = 0.01


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Normalized softmin weights.  Rejected (non-finite) samples carry weight 0."""

    weights: np.ndarray
    offset: float
    normalizer: float
    n_rejected: int = 0

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights**2))

    @property
    def max_weight(self) -> float:
        return float(self.weights.max())

    @property
    def entropy(self) -> float:
        w = self.weights[self.weights > 0]
        return float(-np.sum(w * np.log(w)))


def softmin_weights(costs, lam: float) -> WeightVector:
    """``w_m = exp(-(S_m - psi)/lam) / eta`` with ``psi = min S``.

    Non-finite costs are dropped from the softmin and counted.
    """
    if not lam > 0:
        raise ContractViolation(f"lambda must be > 0, got {lam}")
    costs = np.asarray(costs, dtype=float)
    finite = np.isfinite(costs)
    if not finite.any():
        raise NoValidSamplesError(f"all {costs.size} sample costs are non-finite")
    psi = float(costs[finite].min())
    unnorm = np.zeros_like(costs)
    unnorm[finite] = np.exp(-(costs[finite] - psi) / lam)
    eta = float(unnorm.sum())
    return WeightVector(unnorm / eta, psi, eta, int((~finite).sum()))


@dataclass(frozen=True, eq=False)
class StepResult:
    """Outcome of one MPPI update."""

    control: np.ndarray
    weights: WeightVector
    std_error: np.ndarray
    best_cost: float


def _sample_costs(
    inst: OcpInstance,
    U_hat: np.ndarray,
    cov: CovarianceSpec,
    lam: float,
    M: int,
    seed: int,
    iteration: int,
    workers: int,
    forced_noise: np.ndarray | None,
):
    if forced_noise is not None:
        W = np.asarray(forced_noise, dtype=float)
        S = path_cost_batch(inst, U_hat + W) + importance_correction(cov, lam, U_hat, W)
        return W, S

    def block(b: int, start: int, stop: int):
        W = draw_block(cov, seed, iteration, b, stop - start)
        with np.errstate(over="ignore", invalid="ignore"):
            S = path_cost_batch(inst, U_hat + W) + importance_correction(cov, lam, U_hat, W)
        return W, S

    parts = map_blocks(block, M, workers)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def standard_mppi_step(
    inst: OcpInstance,
    U_hat,
    cov: CovarianceSpec,
    lam: float,
    M: int,
    seed: int,
    *,
    iteration: int = 0,
    workers: int = 1,
    forced_noise: np.ndarray | None = None,
) -> StepResult:
    """One importance-sampled MPPI update of the mean trajectory ``U_hat``.

    Sample costs are ``S(U_hat + W_m) + lam * W_m^T Sigma^{-1} U_hat``; the
    returned control is ``U_hat + sum_m w_m W_m``.  ``forced_noise`` replaces
    the random batch (used for degenerate checks).
    """
    U_hat = np.asarray(U_hat, dtype=float)
    if U_hat.shape != (inst.control_dim,):
        raise ContractViolation(f"U_hat must have length {inst.control_dim}")
    if inst.n_u != inst.n_w or cov.dim != inst.control_dim:
        raise ContractViolation("MPPI needs noise on the control channel (n_w == n_u)")
    if forced_noise is None and M < 1:
        raise ContractViolation(f"M must be >= 1, got {M}")
    W, S = _sample_costs(inst, U_hat, cov, lam, M, seed, iteration, workers, forced_noise)
    wv = softmin_weights(S, lam)
    delta = wv.weights @ W
    resid = W - delta
    se = np.sqrt(wv.weights**2 @ (resid * resid))
    return StepResult(U_hat + delta, wv, se, wv.offset)


@dataclass(frozen=True)
class MppiConfig:
    """Hyperparameters of deterministic MPPI.

    ``sigma0=None`` selects ``lambda0 * R^{-1}`` (evaluated at the initial
    state), the coupling under which the Gibbs exponent equals ``J(W, 0)``.
    """

    samples: int = 100_000
    iterations: int = 10
    shrink_factor: float = math.sqrt(2.0) / 2.0
    lambda0: float = 1.0
    sigma0: CovarianceSpec | None = None
    init_control: tuple[float, ...] | None = None
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.samples < 2:
            raise ContractViolation(f"samples must be >= 2, got {self.samples}")
        if self.iterations < 1:
            raise ContractViolation(f"iterations must be >= 1, got {self.iterations}")
        if not 0.0 < self.shrink_factor < 1.0:
            raise ContractViolation(f"shrink_factor must lie in (0, 1), got {self.shrink_factor}")
        if not self.lambda0 > 0:
            raise ContractViolation(f"lambda0 must be > 0, got {self.lambda0}")
        if self.seed < 0:
            raise ContractViolation("seed must be non-negative")

    def initial_covariance(self, inst: OcpInstance) -> CovarianceSpec:
        if self.sigma0 is not None:
            return self.sigma0
        R0 = inst.cost.R(inst.x0)
        return CovarianceSpec(self.lambda0 * np.linalg.inv(R0), inst.horizon)

    def initial_control(self, inst: OcpInstance) -> np.ndarray:
        if self.init_control is None:
            return inst.zeros()
        U = np.asarray(self.init_control, dtype=float)
        if U.size == 1:
            U = np.full(inst.control_dim, float(U.ravel()[0]))
        if U.shape != (inst.control_dim,):
            raise ContractViolation(f"init_control must have length {inst.control_dim}")
        return U


class IterateRecord(NamedTuple):
    j: int
    beta: float
    lam: float
    control: np.ndarray
    best_cost: float
    ess: float
    std_error: np.ndarray
    n_rejected: int
    weight_sum: float


@dataclass(frozen=True, eq=False)
class SolveReport:
    """Final trajectory, its recomputed value, and per-iteration history."""

    solution: np.ndarray
    value: float
    history: tuple[IterateRecord, ...]
    diagnostics: dict = field(default_factory=dict)

    @property
    def iterates(self) -> np.ndarray:
        return np.array([h.control for h in self.history])


def deterministic_mppi_solve(inst: OcpInstance, cfg: MppiConfig) -> SolveReport:
    """Run ``cfg.iterations`` MPPI steps with ``beta = nu**j``."""
    cov0 = cfg.initial_covariance(inst)
    U = cfg.initial_control(inst)
    history = []
    low_ess = []
    rejected = 0
    last = None
    for j in range(cfg.iterations):
        beta = cfg.shrink_factor**j
        lam = beta**2 * cfg.lambda0
        cov = cov0.scaled(beta**2)
        last = standard_mppi_step(
            inst, U, cov, lam, cfg.samples, cfg.seed, iteration=j, workers=cfg.workers
        )
        U = last.control
        wv = last.weights
        rejected += wv.n_rejected
        if wv.ess < ESS_WARN_FRACTION * cfg.samples:
            low_ess.append(j)
            log.warning("iteration %d: effective sample size %.1f < 1%% of M", j, wv.ess)
        history.append(
            IterateRecord(
                j, beta, lam, U.copy(), last.best_cost, wv.ess, last.std_error, wv.n_rejected, float(wv.weights.sum())
            )
        )
    diagnostics = {
        "weight_entropy": last.weights.entropy,
        "max_weight": last.weights.max_weight,
        "rejected_samples": rejected,
        "low_ess_iterations": low_ess,
    }
    return SolveReport(U, value_of(inst, U), tuple(history), diagnostics)


class ClsEstimate(NamedTuple):
    u0: np.ndarray
    std_error: np.ndarray


def cls_mppi_u0(
    inst: OcpInstance, M: int, seed: int, *, workers: int = 1, probe_states=None, tol: float = 1e-8
) -> ClsEstimate:
    """Monte Carlo closed-loop first control from uncontrolled, softmin-weighted samples.

    Requires input-affine dynamics satisfying the noise/control coupling.
    The estimate is the ``k = 0`` block of a standard MPPI step at
    ``U_hat = 0`` using the instance's covariance and temperature; with a
    non-identity control weight the step runs in canonical coordinates and
    the result is mapped back.
    """
    form = to_canonical(inst.dynamics, inst.cost, inst.lam, probe_states, tol)
    n_u = inst.n_u
    R0 = inst.cost.R(inst.x0)
    same_channel = np.allclose(inst.sigma.step_covariance, inst.lam * np.eye(n_u))
    if same_channel and np.allclose(R0, np.eye(n_u)) and not inst.cost.state_dependent_R:
        step = standard_mppi_step(inst, inst.zeros(), inst.sigma, inst.lam, M, seed, workers=workers)
        return ClsEstimate(step.control[:n_u].copy(), step.std_error[:n_u].copy())
    canon = OcpInstance(
        form.dynamics,
        form.cost,
        inst.horizon,
        inst.x0,
        CovarianceSpec(inst.lam * np.eye(n_u), inst.horizon),
        inst.lam,
        inst.name,
    )
    step = standard_mppi_step(canon, canon.zeros(), canon.sigma, inst.lam, M, seed, workers=workers)
    u0 = form.control_from_canonical(inst.x0, step.control[:n_u])
    se = np.abs(form.control_from_canonical(inst.x0, step.std_error[:n_u]))
    return ClsEstimate(u0, se)


__all__ = [
    "ClsEstimate",
    "IterateRecord",
    "MppiConfig",
    "SolveReport",
    "StepResult",
    "WeightVector",
    "check_assumption1",
    "cls_mppi_u0",
    "deterministic_mppi_solve",
    "softmin_weights",
    "standard_mppi_step",
    "value_of",
]
