r"""Exact means and densities of the MPPI optimal distribution.

For scale :math:`\beta` the optimal distribution has density proportional
to :math:`\exp(-\mathcal{E}(W) / (\beta^2 \lambda_0))` with energy

.. math:: \mathcal{E}(W) = S(W) + \tfrac{\lambda_0}{2} \sum_k w_k^\top \Sigma_0^{-1} w_k,

which equals :math:`J(W, 0)` when :math:`\Sigma_0 = \lambda_0 R^{-1}`.  Its mean
is what an MPPI step estimates with infinitely many samples, so the
quadrature here isolates the smoothing bias from Monte Carlo error.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cubature

from mppi_lab.errors import ContractViolation, GridExtentError, IntegrationBudgetError
from mppi_lab.oracles.search import grid_minimize
from mppi_lab.problem import OcpInstance, path_cost_batch
from mppi_lab.sampling import CovarianceSpec

# cell edges around each mode, in units of its Laplace width
_BREAKS = (0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0)
# weights below exp(-_CUTOFF) relative to the peak are dropped from the support
_CUTOFF = 40.0
_SCAN_1D = 20001
_SCAN_2D = 801
_BUDGET = 20_000


def gibbs_energy(
    inst: OcpInstance, W: np.ndarray, lam0: float | None = None, sigma0: CovarianceSpec | None = None
) -> np.ndarray:
    """``S(W) + lam0/2 * W^T Sigma0^{-1} W`` (``Sigma0`` at unit scale)."""
    lam0 = inst.lam if lam0 is None else lam0
    sigma0 = inst.sigma.with_beta(1.0) if sigma0 is None else sigma0
    W = np.asarray(W, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        quad = np.sum(W * sigma0.precision_apply(W), axis=-1)
        return path_cost_batch(inst, W) + 0.5 * lam0 * quad


@dataclass(frozen=True, eq=False)
class GibbsMode:
    """Global energy minimizer, its axis curvatures, and other local minima."""

    point: np.ndarray
    energy: float
    curvature: np.ndarray
    others: tuple[np.ndarray, ...] = ()


def _fd_hessian_diag(fun, x: np.ndarray) -> np.ndarray:
    d = x.size
    h = 1e-4 * (1.0 + np.abs(x))
    pts = [x]
    for i in range(d):
        e = np.zeros(d)
        e[i] = h[i]
        pts += [x + e, x - e]
    f = fun(np.array(pts))
    return np.array([(f[1 + 2 * i] + f[2 + 2 * i] - 2 * f[0]) / h[i] ** 2 for i in range(d)])


def find_mode(
    inst: OcpInstance,
    box=(-2.0, 2.0),
    lam0: float | None = None,
    sigma0: CovarianceSpec | None = None,
    points: int = 401,
) -> GibbsMode:
    """Locate the energy minimizer over ``box`` and the remaining local minima."""
    d = inst.control_dim
    if d > 2:
        raise ContractViolation("Gibbs-mean quadrature supports N * n_u <= 2")

    def energy(W):
        return gibbs_energy(inst, W, lam0, sigma0)

    lo, hi = np.full(d, float(box[0])), np.full(d, float(box[1]))
    res = grid_minimize(energy, lo, hi, points=points, rounds=40, starts=8)
    curv = _fd_hessian_diag(energy, res.x)
    if np.any(curv <= 0):
        raise ContractViolation("energy has no positive curvature at its minimizer")
    grid, vals = _scan(energy, box, d)
    others = [
        np.array([g[i] for g, i in zip(grid, idx)])
        for idx in _local_minima(vals)
        if np.max(np.abs([g[i] for g, i in zip(grid, idx)] - res.x)) > 2 * (grid[0][1] - grid[0][0])
    ]
    return GibbsMode(res.x, res.value, curv, tuple(others))


def _scan(energy, box, d: int):
    n = _SCAN_1D if d == 1 else _SCAN_2D
    g = np.linspace(box[0], box[1], n)
    grid = [g] * d
    mesh = np.stack([a.ravel() for a in np.meshgrid(*grid, indexing="ij")], axis=-1)
    vals = np.concatenate([energy(mesh[s : s + 65536]) for s in range(0, mesh.shape[0], 65536)])
    return grid, np.where(np.isfinite(vals), vals, np.inf).reshape([n] * d)


def _local_minima(vals: np.ndarray) -> list[tuple[int, ...]]:
    mask = np.isfinite(vals)
    for axis in range(vals.ndim):
        widths = [(1, 1) if a == axis else (0, 0) for a in range(vals.ndim)]
        pad = np.pad(vals, widths, constant_values=np.inf)
        n = vals.shape[axis]
        mask &= (vals < np.take(pad, range(n), axis=axis)) & (vals <= np.take(pad, range(2, n + 2), axis=axis))
    return [tuple(i) for i in np.argwhere(mask)]


def _support(energy, mode: GibbsMode, scale: np.ndarray, temp: float, box, d: int):
    """Bounding box, per axis, of the region where the weight exceeds ``exp(-_CUTOFF)``."""
    grid, vals = _scan(energy, box, d)
    keep = (vals - mode.energy) / temp < _CUTOFF
    edge = np.zeros_like(keep)
    for i in range(d):
        sl = [slice(None)] * d
        for j in (0, -1):
            sl[i] = j
            edge[tuple(sl)] = True
    if np.any(keep & edge):
        raise GridExtentError(
            (float(box[0]), float(box[1])),
            f"integration box {tuple(box)} truncates the optimal distribution at beta={np.sqrt(temp):.3g}; enlarge it",
        )
    lo, hi = np.empty(d), np.empty(d)
    for i in range(d):
        other = tuple(a for a in range(d) if a != i)
        idx = np.flatnonzero(np.any(keep, axis=other) if other else keep)
        step = grid[i][1] - grid[i][0]
        lo[i] = grid[i][idx[0]] - step if idx.size else box[0]
        hi[i] = grid[i][idx[-1]] + step if idx.size else box[1]
    # the coarse scan can miss a narrow peak: always cover the cutoff radius around the mode
    reach = np.sqrt(2.0 * _CUTOFF) * scale
    lo = np.maximum(np.minimum(lo, mode.point - reach), box[0])
    hi = np.minimum(np.maximum(hi, mode.point + reach), box[1])
    return lo, hi


def _axis_cells(lo: float, hi: float, center: float, width: float, extra) -> np.ndarray:
    edges = {lo, hi}
    for r in _BREAKS:
        edges.update((center - r * width, center + r * width))
    edges.update(extra)
    return np.array(sorted(e for e in edges if lo <= e <= hi))


def gibbs_mean(
    inst: OcpInstance,
    beta: float,
    lam0: float | None = None,
    box=(-2.0, 2.0),
    abs_tol: float = 1e-10,
    mode: GibbsMode | None = None,
    sigma0: CovarianceSpec | None = None,
) -> np.ndarray:
    """Mean of the optimal distribution at scale ``beta`` by adaptive cubature.

    The integration region is the part of ``box`` where the weight is not
    negligible, cut into cells at multiples of the Laplace width around the
    mode and at the other local minima.  Each cell is integrated with an
    adaptive Gauss-Kronrod product rule; the propagated error of the mean
    must stay below ``abs_tol``.
    """
    if not beta > 0:
        raise ContractViolation("beta must be > 0")
    lam0 = inst.lam if lam0 is None else lam0
    d = inst.control_dim
    mode = mode or find_mode(inst, box, lam0, sigma0)
    temp = beta**2 * lam0
    m = mode.point
    s = np.sqrt(temp / mode.curvature)

    def energy(W):
        return gibbs_energy(inst, W, lam0, sigma0)

    lo, hi = _support(energy, mode, s, temp, box, d)
    axes = [_axis_cells(lo[i], hi[i], m[i], s[i], [o[i] for o in mode.others]) for i in range(d)]

    def integrand(X: np.ndarray) -> np.ndarray:
        # X in standardized coordinates t = (W - m) / s
        z = -(energy(m + s * X) - mode.energy) / temp
        w = np.where(np.isfinite(z), np.exp(np.minimum(z, 0.0)), 0.0)
        return np.concatenate([w[:, None], w[:, None] * X], axis=1)

    t_axes = [(a - m[i]) / s[i] for i, a in enumerate(axes)]
    cells = list(itertools.product(*[range(len(a) - 1) for a in t_axes]))
    # the normalizer is about (2 pi)^(d/2) in these coordinates and the
    # mean error is s times the error in t
    atol = 0.1 * abs_tol / float(s.max()) / len(cells)
    total = np.zeros(d + 1)
    err = np.zeros(d + 1)
    for cell in cells:
        a = np.array([t_axes[i][c] for i, c in enumerate(cell)])
        b = np.array([t_axes[i][c + 1] for i, c in enumerate(cell)])
        res = cubature(integrand, a, b, rule="gk21", atol=atol, rtol=1e-13, max_subdivisions=_BUDGET)
        if res.status != "converged":
            raise IntegrationBudgetError(
                f"cubature did not converge on cell {a.tolist()}..{b.tolist()} at beta={beta}"
            )
        total += res.estimate
        err += res.error
    den = total[0]
    mean_t = total[1:] / den
    bound = s * (err[1:] + np.abs(mean_t) * err[0]) / den
    if np.any(bound > abs_tol):
        raise IntegrationBudgetError(f"error bound {bound.max():.3e} exceeds abs_tol={abs_tol:.1e}")
    return m + s * mean_t


@dataclass(frozen=True, eq=False)
class DensityCurve:
    w: np.ndarray
    density: np.ndarray
    beta: float

    def mass(self, lo: float, hi: float) -> float:
        mask = (self.w >= lo) & (self.w <= hi)
        return float(np.trapezoid(self.density[mask], self.w[mask]))


def optimal_density_curve(
    inst: OcpInstance, beta: float, grid, lam0: float | None = None, sigma0: CovarianceSpec | None = None
) -> DensityCurve:
    """Normalized optimal density on ``grid`` for a scalar problem."""
    if inst.control_dim != 1:
        raise ContractViolation("density curves need a scalar decision variable")
    lam0 = inst.lam if lam0 is None else lam0
    w = np.asarray(grid, dtype=float)
    e = gibbs_energy(inst, w[:, None], lam0, sigma0)
    z = -(e - np.min(e)) / (beta**2 * lam0)
    unnorm = np.exp(z)
    if max(unnorm[0], unnorm[-1]) > 1e-8:
        raise GridExtentError(
            (float(w[0]), float(w[-1])), f"grid [{w[0]}, {w[-1]}] too narrow for beta={beta}"
        )
    dens = unnorm / np.trapezoid(unnorm, w)
    return DensityCurve(w, dens, float(beta))
