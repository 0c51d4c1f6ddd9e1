"""Optimal control problem instances, rollouts and costs.

All model callables are vectorized over leading axes: states have shape
``(..., n_x)``, control and noise steps ``(..., n_u)`` / ``(..., n_w)``.
Trajectories are flat, ``(..., N * n_u)``, with step ``k`` occupying the
``k``-th block.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.stats import qmc

from mppi_lab.errors import (
    ContractViolation,
    NumericOverflowError,
    TransformationInvalidError,
    UnsupportedModelError,
)
from mppi_lab.sampling import CovarianceSpec

ArrayFn = Callable[[np.ndarray], np.ndarray]

GENERAL = "general"
INPUT_AFFINE = "input_affine"


@dataclass(frozen=True, eq=False)
class DynamicsModel:
    """Discrete-time dynamics ``x+ = step(x, u, w)``.

    For ``kind="input_affine"`` supply ``f_tilde``, ``B`` and ``G``; the step
    is then ``f_tilde(x) + B(x) u + G(x) w`` unless given explicitly.
    ``B(x)`` returns ``(..., n_x, n_u)`` and ``G(x)`` ``(..., n_x, n_w)``.
    """

    n_x: int
    n_u: int
    n_w: int
    step: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray] | None = None
    kind: str = GENERAL
    f_tilde: ArrayFn | None = None
    B: ArrayFn | None = None
    G: ArrayFn | None = None

    def __post_init__(self) -> None:
        if min(self.n_x, self.n_u, self.n_w) < 1:
            raise ContractViolation("n_x, n_u, n_w must all be >= 1")
        if self.kind not in (GENERAL, INPUT_AFFINE):
            raise ContractViolation(f"unknown dynamics kind {self.kind!r}")
        if self.kind == INPUT_AFFINE:
            if self.f_tilde is None or self.B is None or self.G is None:
                raise ContractViolation("input-affine dynamics need f_tilde, B and G")
            if self.step is None:
                object.__setattr__(self, "step", self._affine_step)
        elif self.step is None:
            raise ContractViolation("general dynamics need a step function")

    def _affine_step(self, x: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        Bu = np.einsum("...ij,...j->...i", self.B(x), u)
        Gw = np.einsum("...ij,...j->...i", self.G(x), w)
        return self.f_tilde(x) + Bu + Gw

    @classmethod
    def input_affine(
        cls, n_x: int, n_u: int, n_w: int, f_tilde: ArrayFn, B: ArrayFn, G: ArrayFn, step=None
    ) -> DynamicsModel:
        return cls(n_x, n_u, n_w, step=step, kind=INPUT_AFFINE, f_tilde=f_tilde, B=B, G=G)

    def __call__(self, x: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        return self.step(x, u, w)


def constant_matrix(M) -> ArrayFn:
    """A state-independent matrix map broadcast over leading state axes."""
    M = np.atleast_2d(np.asarray(M, dtype=float))

    def fn(x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(M, np.shape(x)[:-1] + M.shape)

    return fn


@dataclass(frozen=True, eq=False)
class CostModel:
    """Stage cost ``c(x) + 1/2 u^T R(x) u`` and terminal cost ``E(x)``.

    ``control_weight`` is either a constant SPD matrix (scalars accepted) or
    a callable ``x -> (..., n_u, n_u)``.  ``state_cost=None`` means ``c = 0``.
    """

    terminal: ArrayFn
    control_weight: np.ndarray | ArrayFn = 1.0
    state_cost: ArrayFn | None = None

    def __post_init__(self) -> None:
        if callable(self.control_weight):
            return
        R = np.atleast_2d(np.asarray(self.control_weight, dtype=float))
        if R.shape[0] != R.shape[1] or not np.allclose(R, R.T, rtol=0, atol=1e-12):
            raise ContractViolation("control weight R must be symmetric")
        if np.linalg.eigvalsh(R).min() <= 0.0:
            raise ContractViolation("control weight R must be positive definite")
        R.setflags(write=False)
        object.__setattr__(self, "control_weight", R)

    @property
    def state_dependent_R(self) -> bool:
        return callable(self.control_weight)

    def R(self, x: np.ndarray) -> np.ndarray:
        if callable(self.control_weight):
            return np.asarray(self.control_weight(x), dtype=float)
        return np.broadcast_to(self.control_weight, np.shape(x)[:-1] + self.control_weight.shape)

    def c(self, x: np.ndarray) -> np.ndarray:
        if self.state_cost is None:
            return np.zeros(np.shape(x)[:-1])
        return self.state_cost(x)

    def stage(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        quad = np.einsum("...i,...ij,...j->...", u, self.R(x), u)
        return self.c(x) + 0.5 * quad


@dataclass(frozen=True, eq=False)
class OcpInstance:
    """One optimal control problem: model, horizon, initial state, noise, temperature."""

    dynamics: DynamicsModel
    cost: CostModel
    horizon: int
    x0: np.ndarray
    sigma: CovarianceSpec
    lam: float = 1.0
    name: str = ""

    def __post_init__(self) -> None:
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if self.horizon < 1:
            raise ContractViolation(f"horizon must be >= 1, got {self.horizon}")
        if self.lam <= 0:
            raise ContractViolation(f"lambda must be > 0, got {self.lam}")
        if x0.shape != (self.dynamics.n_x,) or not np.all(np.isfinite(x0)):
            raise ContractViolation(f"x0 must be a finite vector of length {self.dynamics.n_x}")
        if self.sigma.n_w != self.dynamics.n_w or self.sigma.horizon != self.horizon:
            raise ContractViolation("sigma is inconsistent with dynamics n_w or horizon")
        if not self.cost.state_dependent_R and self.cost.control_weight.shape != (
            self.dynamics.n_u,
            self.dynamics.n_u,
        ):
            raise ContractViolation("control weight R has the wrong size")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)

    @property
    def n_u(self) -> int:
        return self.dynamics.n_u

    @property
    def n_w(self) -> int:
        return self.dynamics.n_w

    @property
    def control_dim(self) -> int:
        return self.horizon * self.dynamics.n_u

    @property
    def noise_dim(self) -> int:
        return self.horizon * self.dynamics.n_w

    def zeros(self) -> np.ndarray:
        return np.zeros(self.control_dim)


def _steps(arr, n: int, N: int, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != n * N:
        raise ContractViolation(f"{what} must have trailing length {n * N}")
    return arr.reshape(*arr.shape[:-1], N, n)


def _simulate(inst: OcpInstance, U, W, strict: bool) -> tuple[np.ndarray, np.ndarray]:
    dyn, N = inst.dynamics, inst.horizon
    u = _steps(U, dyn.n_u, N, "U")
    if W is None:
        w = np.zeros(u.shape[:-2] + (N, dyn.n_w))
    else:
        w = _steps(W, dyn.n_w, N, "W")
    batch = np.broadcast_shapes(u.shape[:-2], w.shape[:-2])
    u = np.broadcast_to(u, batch + u.shape[-2:])
    w = np.broadcast_to(w, batch + w.shape[-2:])
    states = np.empty(batch + (N + 1, dyn.n_x))
    states[..., 0, :] = inst.x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(N):
            states[..., k + 1, :] = dyn.step(states[..., k, :], u[..., k, :], w[..., k, :])
            if strict and not np.all(np.isfinite(states[..., k + 1, :])):
                raise NumericOverflowError(k)
    return states, u


def rollout(inst: OcpInstance, U, W=None) -> np.ndarray:
    """State trajectory ``(x_0, ..., x_N)``, shape ``(..., N+1, n_x)``.

    ``W=None`` means the zero noise trajectory.  Raises
    :class:`NumericOverflowError` naming the first step that produced a
    non-finite state.
    """
    return _simulate(inst, U, W, strict=True)[0]


def _trajectory_cost(inst: OcpInstance, states: np.ndarray, u: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        stage = inst.cost.stage(states[..., :-1, :], u).sum(axis=-1)
        return stage + inst.cost.terminal(states[..., -1, :])


def overall_cost(inst: OcpInstance, U, W=None) -> np.ndarray | float:
    """Sum of stage costs plus terminal cost along the rollout of ``(U, W)``."""
    states, u = _simulate(inst, U, W, strict=True)
    out = _trajectory_cost(inst, states, u)
    return float(out) if np.ndim(out) == 0 else out


def path_cost(inst: OcpInstance, V) -> np.ndarray | float:
    """State-only cost ``E(x_N) + sum_k c(x_k)`` of ``V`` driven through noise-free dynamics."""
    states, _ = _simulate(inst, V, None, strict=True)
    out = _path_from_states(inst, states)
    return float(out) if np.ndim(out) == 0 else out


def _path_from_states(inst: OcpInstance, states: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        return inst.cost.terminal(states[..., -1, :]) + inst.cost.c(states[..., :-1, :]).sum(axis=-1)


def path_cost_batch(inst: OcpInstance, V: np.ndarray) -> np.ndarray:
    """Vectorized path cost that returns ``inf``/``nan`` instead of raising."""
    states, _ = _simulate(inst, V, None, strict=False)
    out = _path_from_states(inst, states)
    return np.where(np.all(np.isfinite(states), axis=(-2, -1)), out, np.inf)


def overall_cost_batch(inst: OcpInstance, U: np.ndarray, W=None) -> np.ndarray:
    """Vectorized overall cost; non-finite rollouts map to ``inf``."""
    states, u = _simulate(inst, U, W, strict=False)
    out = _trajectory_cost(inst, states, u)
    return np.where(np.all(np.isfinite(states), axis=(-2, -1)) & np.isfinite(out), out, np.inf)


def value_of(inst: OcpInstance, U) -> float:
    """Deterministic objective ``J(U, 0)``."""
    return float(overall_cost(inst, U, None))


# --- input-affine structure -------------------------------------------------


class Assumption1Check(NamedTuple):
    holds: bool
    max_residual: float
    worst_state: np.ndarray


def default_probe_states(n_x: int, count: int = 100, box: tuple[float, float] = (-2.0, 2.0)) -> np.ndarray:
    """Quasi-random (Halton) probe states filling ``box**n_x``."""
    pts = qmc.Halton(d=n_x, scramble=False).random(count + 1)[1:]
    return qmc.scale(pts, [box[0]] * n_x, [box[1]] * n_x)


def check_assumption1(
    dyn: DynamicsModel,
    cost: CostModel,
    lam: float,
    probe_states=None,
    tol: float = 1e-8,
) -> Assumption1Check:
    """Test ``lam * B R^{-1} B^T == G G^T`` (Frobenius) at every probe state."""
    if dyn.kind != INPUT_AFFINE:
        raise UnsupportedModelError("the noise/control coupling check needs input-affine dynamics")
    X = default_probe_states(dyn.n_x) if probe_states is None else np.atleast_2d(
        np.asarray(probe_states, dtype=float)
    )
    B, G, R = dyn.B(X), dyn.G(X), cost.R(X)
    lhs = lam * B @ np.linalg.solve(R, np.swapaxes(B, -1, -2))
    rhs = G @ np.swapaxes(G, -1, -2)
    resid = np.linalg.norm(lhs - rhs, axis=(-2, -1))
    i = int(np.argmax(resid))
    worst = float(resid[i])
    return Assumption1Check(bool(worst <= tol), worst, X[i].copy())


def _sym_sqrt_pair(R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(R)
    root = np.sqrt(vals)
    sq = (vecs * root[..., None, :]) @ np.swapaxes(vecs, -1, -2)
    isq = (vecs / root[..., None, :]) @ np.swapaxes(vecs, -1, -2)
    return sq, isq


@dataclass(frozen=True, eq=False)
class CanonicalForm:
    """Equivalent problem with identity control weight and noise on the control channel.

    Dynamics are ``x+ = f_tilde(x) + Bbar(x) (ubar + wbar)`` with
    ``Bbar = B R^{-1/2}`` and ``wbar ~ N(0, lam I)``.
    """

    dynamics: DynamicsModel
    cost: CostModel
    noise_variance: float
    original: DynamicsModel = field(repr=False)
    original_cost: CostModel = field(repr=False)

    def control_to_canonical(self, x, u) -> np.ndarray:
        sq, _ = _sym_sqrt_pair(self.original_cost.R(np.asarray(x, dtype=float)))
        return np.einsum("...ij,...j->...i", sq, u)

    def control_from_canonical(self, x, ubar) -> np.ndarray:
        _, isq = _sym_sqrt_pair(self.original_cost.R(np.asarray(x, dtype=float)))
        return np.einsum("...ij,...j->...i", isq, ubar)

    def noise_to_canonical(self, x, w) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        Bbar = self.dynamics.B(x)
        Gw = np.einsum("...ij,...j->...i", self.original.G(x), w)
        return np.einsum("...ij,...j->...i", np.linalg.pinv(Bbar), Gw)

    def match_trajectory(self, x0, U, W) -> tuple[np.ndarray, np.ndarray]:
        """Map an original ``(U, W)`` pair to the canonical ``(Ubar, Wbar)``."""
        dyn = self.original
        N = np.size(U) // dyn.n_u
        u = np.asarray(U, dtype=float).reshape(N, dyn.n_u)
        w = np.asarray(W, dtype=float).reshape(N, dyn.n_w)
        x = np.asarray(x0, dtype=float)
        ubar, wbar = [], []
        for k in range(N):
            ubar.append(self.control_to_canonical(x, u[k]))
            wbar.append(self.noise_to_canonical(x, w[k]))
            x = dyn.step(x, u[k], w[k])
        return np.concatenate(ubar), np.concatenate(wbar)


def to_canonical(
    dyn: DynamicsModel, cost: CostModel, lam: float, probe_states=None, tol: float = 1e-8
) -> CanonicalForm:
    """Rewrite an input-affine problem so control and noise share one channel."""
    check = check_assumption1(dyn, cost, lam, probe_states, tol)
    if not check.holds:
        raise TransformationInvalidError(
            f"coupling residual {check.max_residual:.3e} > {tol:.1e} at x={check.worst_state}"
        )
    B, f_tilde = dyn.B, dyn.f_tilde

    def Bbar(x: np.ndarray) -> np.ndarray:
        _, isq = _sym_sqrt_pair(cost.R(x))
        return B(x) @ isq

    n_u = dyn.n_u
    canon_dyn = DynamicsModel.input_affine(dyn.n_x, n_u, n_u, f_tilde, Bbar, Bbar)
    canon_cost = CostModel(cost.terminal, np.eye(n_u), cost.state_cost)
    return CanonicalForm(canon_dyn, canon_cost, float(lam), dyn, cost)
