"""Gauss-Hermite rules for expectations under normal distributions."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from mppi_lab.errors import ContractViolation
from mppi_lab.sampling import CovarianceSpec


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes and weights for ``E[g(z)]`` with ``z ~ N(0, I_dim)``."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def expect(self, values: np.ndarray) -> np.ndarray:
        """Contract the trailing node axis of ``values`` against the weights."""
        return values @ self.weights


@lru_cache(maxsize=32)
def _hermite(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = hermegauss(order)
    return x, w / w.sum()


def gauss_hermite(order: int, dim: int = 1) -> QuadratureRule:
    """Probabilists' Gauss-Hermite rule, tensorized over ``dim`` axes."""
    if order < 1 or dim < 1:
        raise ContractViolation("order and dim must be >= 1")
    x, w = _hermite(order)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=-1)
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return QuadratureRule(nodes, weights)


def noise_rule(cov: CovarianceSpec, order: int) -> QuadratureRule:
    """Rule for whole noise trajectories ``W ~ N(0, scale * lifted sigma)``."""
    base = gauss_hermite(order, cov.dim)
    z = base.nodes.reshape(-1, cov.horizon, cov.n_w)
    W = (z @ cov.cholesky.T).reshape(base.size, cov.dim)
    return QuadratureRule(W, base.weights)
