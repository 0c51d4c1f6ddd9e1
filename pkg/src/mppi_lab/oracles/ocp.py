"""Reference solutions of the deterministic, open-loop and closed-loop problems."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from mppi_lab.errors import ContractViolation, GridExtentError, OracleBoundaryError
from mppi_lab.oracles.quadrature import gauss_hermite, noise_rule
from mppi_lab.oracles.search import grid_minimize
from mppi_lab.problem import OcpInstance, overall_cost_batch


@dataclass(frozen=True, eq=False)
class PolicyTable:
    """Second-stage feedback ``u1*(x1)`` tabulated on a state grid."""

    states: np.ndarray
    controls: np.ndarray
    values: np.ndarray

    def __call__(self, x) -> np.ndarray:
        return np.interp(x, self.states, self.controls)


@dataclass(frozen=True, eq=False)
class OracleSolution:
    """A reference minimizer with its value and a certified tolerance."""

    minimizer: np.ndarray
    value: float
    tol: float
    method: dict = field(default_factory=dict)
    policy: PolicyTable | None = None

    @property
    def u0(self) -> np.ndarray:
        return self.minimizer


def _box(inst: OcpInstance, box) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = box
    d = inst.control_dim
    return np.full(d, float(lo)), np.full(d, float(hi))


def det_ocp_oracle(
    inst: OcpInstance, box=(-2.0, 2.0), points: int = 401, rounds: int = 40
) -> OracleSolution:
    """Minimize ``J(U, 0)`` by exhaustive scan plus refinement."""
    if inst.control_dim > 4:
        raise ContractViolation("exhaustive deterministic search needs N * n_u <= 4")
    lower, upper = _box(inst, box)
    res = grid_minimize(lambda U: overall_cost_batch(inst, U), lower, upper, points, rounds)
    meta = {"oracle": "det", "box": list(box), "grid_points": res.grid_points, "rounds": rounds, "spacing": res.spacing}
    return OracleSolution(res.x, res.value, res.tol, meta)


def ols_ocp_oracle(
    inst: OcpInstance,
    order: int = 20,
    box=(-2.0, 2.0),
    beta: float = 1.0,
    points: int = 101,
    rounds: int = 40,
    check_order: bool = True,
) -> OracleSolution:
    """Minimize ``E_W J(U, W)`` with tensor Gauss-Hermite quadrature over ``W``.

    The noise covariance is the instance's, scaled by ``beta**2``.  With
    ``check_order`` the problem is solved again at twice the order; that
    solution is returned and the change enters the certified tolerance.
    """
    if inst.noise_dim > 3:
        raise ContractViolation("tensor quadrature needs N * n_w <= 3")
    cov = inst.sigma.scaled(beta**2)
    lower, upper = _box(inst, box)

    def solve(q: int):
        rule = noise_rule(cov, q)

        def expected(U: np.ndarray) -> np.ndarray:
            return rule.expect(overall_cost_batch(inst, U[:, None, :], rule.nodes[None, :, :]))

        return grid_minimize(expected, lower, upper, points, rounds)

    res = solve(order)
    tol, used = res.tol, order
    if check_order:
        hi = solve(2 * order)
        tol = float(max(hi.tol, np.max(np.abs(hi.x - res.x))))
        res, used = hi, 2 * order
    meta = {
        "oracle": "ols",
        "box": list(box),
        "quad_order": used,
        "beta": beta,
        "grid_points": res.grid_points,
        "rounds": rounds,
    }
    return OracleSolution(res.x, res.value, tol, meta)


# --- closed loop ------------------------------------------------------------

_INNER_SCAN = 401
_GOLDEN_ITERS = 80
_INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


def _inner_objective(inst: OcpInstance, x: np.ndarray, u: np.ndarray, noise: np.ndarray, weights) -> np.ndarray:
    """``1/2 R u^2 + E_w E(f(x, u, w))`` for state column ``x`` and control array ``u``."""
    dyn, cost = inst.dynamics, inst.cost
    xs = np.broadcast_to(x[..., None], u.shape + (noise.size,))[..., None]
    us = np.broadcast_to(u[..., None], u.shape + (noise.size,))[..., None]
    ws = np.broadcast_to(noise, u.shape + (noise.size,))[..., None]
    with np.errstate(over="ignore", invalid="ignore"):
        nxt = dyn.step(xs, us, ws)
        term = cost.terminal(nxt) @ weights
        R = cost.R(x[..., None])[..., 0, 0]
        return 0.5 * R * u * u + term


def _minimize_inner(inst: OcpInstance, xgrid: np.ndarray, noise, weights, bound: float):
    """Vectorized scan + golden-section minimization over ``u`` for every grid state."""
    n = xgrid.size
    u_best = np.empty(n)
    b = np.full(n, float(bound))
    todo = np.arange(n)
    for _ in range(8):
        if todo.size == 0:
            break
        scan = np.linspace(-1.0, 1.0, _INNER_SCAN)
        vals = np.empty((todo.size, _INNER_SCAN))
        for s in range(0, todo.size, 64):
            rows = todo[s : s + 64]
            U = scan[None, :] * b[rows, None]
            vals[s : s + 64] = _inner_objective(inst, xgrid[rows, None], U, noise, weights)
        vals = np.where(np.isfinite(vals), vals, np.inf)
        k = np.argmin(vals, axis=1)
        u_best[todo] = scan[k] * b[todo]
        at_edge = (k == 0) | (k == _INNER_SCAN - 1)
        b[todo[at_edge]] *= 2.0
        todo = todo[at_edge]
    if todo.size:
        raise OracleBoundaryError(xgrid[todo].tolist()[:3], ("inner control box", float(b.max())))
    h = 2.0 * b / (_INNER_SCAN - 1)
    lo, hi = u_best - h, u_best + h
    c = hi - _INV_PHI * (hi - lo)
    d = lo + _INV_PHI * (hi - lo)
    fc = _inner_objective(inst, xgrid, c, noise, weights)
    fd = _inner_objective(inst, xgrid, d, noise, weights)
    for _ in range(_GOLDEN_ITERS):
        left = fc < fd
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
        d_new = np.where(left, c, lo + _INV_PHI * (hi - lo))
        c_new = np.where(left, hi - _INV_PHI * (hi - lo), d)
        fd_new = np.where(left, fc, np.nan)
        fc_new = np.where(left, np.nan, fd)
        need_c = left
        fc_new[need_c] = _inner_objective(inst, xgrid[need_c], c_new[need_c], noise, weights)
        fd_new[~need_c] = _inner_objective(inst, xgrid[~need_c], d_new[~need_c], noise, weights)
        c, d, fc, fd = c_new, d_new, fc_new, fd_new
    u = 0.5 * (lo + hi)
    val = _inner_objective(inst, xgrid, u, noise, weights)
    return u, val


def _first_stage(inst: OcpInstance, value_next, noise, weights):
    """Vectorized ``u0 -> c(x0) + 1/2 R u0^2 + E_w V1(f(x0, u0, w))``."""
    dyn, cost = inst.dynamics, inst.cost
    x0 = inst.x0[0]
    R0 = float(cost.R(inst.x0)[0, 0])
    c0 = float(cost.c(inst.x0))

    def fun(U: np.ndarray) -> np.ndarray:
        u = U[:, 0]
        shape = (u.size, noise.size, 1)
        with np.errstate(over="ignore", invalid="ignore"):
            x1 = dyn.step(np.full(shape, x0), np.broadcast_to(u[:, None, None], shape), np.broadcast_to(noise[None, :, None], shape))
            return c0 + 0.5 * R0 * u * u + value_next(x1[..., 0]) @ weights

    return fun


def _reach(inst: OcpInstance, u_lo: float, u_hi: float, noise) -> tuple[float, float]:
    u = np.linspace(u_lo, u_hi, 201)
    shape = (u.size, noise.size, 1)
    x1 = inst.dynamics.step(
        np.full(shape, inst.x0[0]), np.broadcast_to(u[:, None, None], shape), np.broadcast_to(noise[None, :, None], shape)
    )
    return float(x1.min()), float(x1.max())


def _solve_two_stage(inst, noise, weights, u_lo, u_hi, n_grid, inner_bound, rounds):
    a, b = _reach(inst, u_lo, u_hi, noise)
    pad = 0.01 * (b - a) + 1e-9
    xgrid = np.linspace(a - pad, b + pad, n_grid)
    u1, v_next = _minimize_inner(inst, xgrid, noise, weights, inner_bound)
    v1 = v_next + inst.cost.c(xgrid[:, None])
    spline = CubicSpline(xgrid, v1)

    def value_next(x):
        if np.any(x < xgrid[0]) or np.any(x > xgrid[-1]):
            raise GridExtentError((float(np.min(x)), float(np.max(x))))
        return spline(x)

    fun = _first_stage(inst, value_next, noise, weights)
    res = grid_minimize(fun, [u_lo], [u_hi], points=401, rounds=rounds)
    return res, PolicyTable(xgrid, u1, v1)


def cls_ocp_oracle(
    inst: OcpInstance,
    order: int = 20,
    beta: float = 1.0,
    box=(-2.0, 2.0),
    policy_points: int = 801,
    inner_bound: float = 4.0,
    zoom: float = 0.5,
    rounds: int = 40,
) -> OracleSolution:
    """Closed-loop reference by dynamic programming for scalar problems with ``N <= 2``.

    Backward pass: ``V1(x1) = c(x1) + min_u1 [1/2 R u1^2 + E_w E(f(x1, u1, w))]``
    on a state grid covering every quadrature-reachable ``x1``; forward
    pass minimizes ``1/2 R u0^2 + E_w V1(f(x0, u0, w))`` with ``V1`` spline
    interpolated.  The solve is repeated on a zoomed control box and then
    on a grid with half the spacing; the change between those two is the
    certified tolerance.
    """
    dyn = inst.dynamics
    if dyn.n_x != 1 or dyn.n_u != 1 or dyn.n_w != 1:
        raise ContractViolation("closed-loop oracle needs scalar state, control and noise")
    if inst.horizon not in (1, 2):
        raise ContractViolation("closed-loop oracle supports horizons 1 and 2")
    sd = float(np.sqrt(inst.sigma.scaled(beta**2).step_covariance[0, 0]))
    rule = gauss_hermite(order)
    noise, weights = sd * rule.nodes[:, 0], rule.weights
    meta = {"oracle": "cls", "quad_order": order, "beta": beta, "box": list(box)}

    if inst.horizon == 1:
        fun = _first_stage(inst, lambda x: inst.cost.terminal(x[..., None]), noise, weights)
        res = grid_minimize(fun, [box[0]], [box[1]], points=401, rounds=rounds)
        return OracleSolution(res.x, res.value, res.tol, meta)

    coarse, _ = _solve_two_stage(inst, noise, weights, box[0], box[1], policy_points, inner_bound, rounds)
    u_lo, u_hi = coarse.x[0] - zoom, coarse.x[0] + zoom
    mid, _ = _solve_two_stage(inst, noise, weights, u_lo, u_hi, policy_points, inner_bound, rounds)
    fine, policy = _solve_two_stage(inst, noise, weights, u_lo, u_hi, 2 * policy_points - 1, inner_bound, rounds)
    tol = float(max(abs(fine.x[0] - mid.x[0]), fine.tol))
    meta.update(policy_points=2 * policy_points - 1, policy_extent=[float(policy.states[0]), float(policy.states[-1])])
    return OracleSolution(fine.x, fine.value, tol, meta, policy)
