"""Block-diagonal Gaussian trajectory sampling.

Noise trajectories are flat vectors of length ``N * n_w`` whose per-step
blocks are i.i.d. ``N(0, scale * sigma)``.  The lifted covariance is never
formed densely; every operation works on the per-step block.

Random streams are counter based: sample ``m`` of iteration ``j`` is drawn
from a Philox generator keyed by ``(seed, j, m // BLOCK_SIZE)`` and read at
offset ``m % BLOCK_SIZE``.  A sample therefore depends only on
``(seed, j, m)``, never on the batch size or on how blocks are spread over
workers.
"""

from __future__ import annotations

import csv
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mppi_lab.errors import ContractViolation, CovarianceInvalidError

BLOCK_SIZE = 8192

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True, eq=False)
class CovarianceSpec:
    """Per-step covariance ``sigma`` lifted over ``horizon`` steps and scaled.

    ``scale`` plays the role of beta squared: the effective per-step
    covariance is ``scale * sigma``.
    """

    sigma: np.ndarray
    horizon: int
    scale: float = 1.0
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise CovarianceInvalidError(f"sigma must be square, got shape {sigma.shape}")
        if self.horizon < 1:
            raise ContractViolation(f"horizon must be >= 1, got {self.horizon}")
        if not np.all(np.isfinite(sigma)) or not np.allclose(sigma, sigma.T, rtol=0, atol=1e-12):
            raise CovarianceInvalidError("sigma must be finite and symmetric")
        if not np.isfinite(self.scale) or self.scale <= 0.0:
            raise CovarianceInvalidError(
                f"scale (beta^2) must be > 0, got {self.scale}; a zero covariance is not PD"
            )
        try:
            chol = np.linalg.cholesky(self.scale * sigma)
        except np.linalg.LinAlgError as exc:
            raise CovarianceInvalidError("scaled sigma is not positive definite") from exc
        sigma.setflags(write=False)
        chol.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "_chol", chol)

    @classmethod
    def isotropic(cls, variance: float, n_w: int, horizon: int, scale: float = 1.0) -> CovarianceSpec:
        return cls(variance * np.eye(n_w), horizon, scale)

    @property
    def n_w(self) -> int:
        return self.sigma.shape[0]

    @property
    def dim(self) -> int:
        return self.n_w * self.horizon

    @property
    def beta(self) -> float:
        return float(np.sqrt(self.scale))

    @property
    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor of the scaled per-step covariance."""
        return self._chol

    @property
    def step_covariance(self) -> np.ndarray:
        return self.scale * self.sigma

    def with_beta(self, beta: float) -> CovarianceSpec:
        """Same sigma, scale set to ``beta**2``."""
        return CovarianceSpec(self.sigma, self.horizon, float(beta) ** 2)

    def scaled(self, factor: float) -> CovarianceSpec:
        """Multiply the current scale by ``factor``."""
        return CovarianceSpec(self.sigma, self.horizon, self.scale * float(factor))

    def blocks(self, W: np.ndarray) -> np.ndarray:
        W = np.asarray(W, dtype=float)
        if W.shape[-1] != self.dim:
            raise ContractViolation(f"trajectory length {W.shape[-1]} != N*n_w = {self.dim}")
        return W.reshape(*W.shape[:-1], self.horizon, self.n_w)

    def whiten(self, W: np.ndarray) -> np.ndarray:
        """Map trajectories to standard-normal coordinates, blockwise."""
        blocks = self.blocks(W)
        flat = blocks.reshape(-1, self.n_w).T
        z = np.linalg.solve(self._chol, flat) if self.n_w > 1 else flat / self._chol[0, 0]
        return z.T.reshape(blocks.shape).reshape(W.shape)

    def precision_apply(self, W: np.ndarray) -> np.ndarray:
        """Blockwise product with the inverse of the lifted scaled covariance."""
        blocks = self.blocks(W)
        flat = blocks.reshape(-1, self.n_w).T
        out = np.linalg.solve(self.step_covariance, flat)
        return out.T.reshape(blocks.shape).reshape(np.shape(W))

    def logdet(self) -> float:
        return float(2.0 * self.horizon * np.sum(np.log(np.diag(self._chol))))


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Immutable batch of ``M`` noise trajectories with their seed lineage."""

    noises: np.ndarray
    seed: int
    iteration: int = 0

    def __post_init__(self) -> None:
        self.noises.setflags(write=False)

    @property
    def count(self) -> int:
        return self.noises.shape[0]

    def to_csv(self, path: str | Path, n_w: int) -> Path:
        """Dump as long-format CSV with columns ``m, k, component, value``."""
        path = Path(path)
        blocks = self.noises.reshape(self.count, -1, n_w)
        with path.open("w", newline="") as fh:
            fh.write(f"# seed={self.seed} iteration={self.iteration}\n")
            writer = csv.writer(fh)
            writer.writerow(["m", "k", "component", "value"])
            for m, k, i in np.ndindex(blocks.shape):
                writer.writerow([m, k, i, repr(float(blocks[m, k, i]))])
        return path


def block_ranges(M: int) -> list[tuple[int, int, int]]:
    """``(block index, start, stop)`` triples covering ``range(M)``."""
    return [(b, s, min(s + BLOCK_SIZE, M)) for b, s in enumerate(range(0, M, BLOCK_SIZE))]


def _generator(seed: int, iteration: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), int(iteration), int(block)])
    return np.random.Generator(np.random.Philox(ss))


def draw_block(cov: CovarianceSpec, seed: int, iteration: int, block: int, count: int) -> np.ndarray:
    """Draw the first ``count`` samples of one counter block, shape ``(count, N*n_w)``."""
    z = _generator(seed, iteration, block).standard_normal((count, cov.horizon, cov.n_w))
    return (z @ cov.cholesky.T).reshape(count, cov.dim)


def map_blocks(fn: Callable[[int, int, int], object], M: int, workers: int = 1) -> list:
    """Apply ``fn(block, start, stop)`` over all blocks, results in block order."""
    ranges = block_ranges(M)
    if workers <= 1 or len(ranges) == 1:
        return [fn(*r) for r in ranges]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda r: fn(*r), ranges))


def draw_batch(
    cov: CovarianceSpec, M: int, seed: int, iteration: int = 0, workers: int = 1
) -> SampleBatch:
    """Draw ``M`` trajectories from ``N(0, scale * blockdiag(sigma))``."""
    if M < 1:
        raise ContractViolation(f"M must be >= 1, got {M}")
    if seed < 0:
        raise ContractViolation(f"seed must be non-negative, got {seed}")
    parts = map_blocks(lambda b, s, e: draw_block(cov, seed, iteration, b, e - s), M, workers)
    return SampleBatch(np.concatenate(parts, axis=0), seed, iteration)


def draw_sample(cov: CovarianceSpec, seed: int, m: int, iteration: int = 0) -> np.ndarray:
    """Reproduce sample ``m`` alone from ``(seed, iteration, m)``."""
    block, offset = divmod(m, BLOCK_SIZE)
    return draw_block(cov, seed, iteration, block, offset + 1)[offset]


def log_density(cov: CovarianceSpec, mean: np.ndarray, W: np.ndarray) -> np.ndarray | float:
    """Log-density of ``W`` under ``N(mean, scale * lifted sigma)``."""
    diff = np.asarray(W, dtype=float) - np.asarray(mean, dtype=float)
    z = cov.whiten(diff)
    out = -0.5 * np.sum(z * z, axis=-1) - 0.5 * cov.dim * _LOG_2PI - 0.5 * cov.logdet()
    return float(out) if np.ndim(out) == 0 else out


def importance_correction(
    cov: CovarianceSpec, lam: float, U_hat: np.ndarray, W: np.ndarray
) -> np.ndarray | float:
    """Cost correction ``lam * W^T (scale * lifted sigma)^{-1} U_hat``.

    Added to each sampled path cost when sampling around ``U_hat`` instead
    of zero, so the weighted expectation keeps its value.
    """
    if lam <= 0:
        raise ContractViolation(f"lambda must be > 0, got {lam}")
    U_hat = np.asarray(U_hat, dtype=float)
    out = lam * np.sum(np.asarray(W, dtype=float) * cov.precision_apply(U_hat), axis=-1)
    return float(out) if np.ndim(out) == 0 else out
