"""Exhaustive grid scan followed by halving pattern-search refinement.

Meant for desk-scale problems (at most four decision variables) where a
dense scan is affordable and local minima must not trap the reference.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from mppi_lab.errors import ContractViolation, OracleBoundaryError

MAX_GRID_POINTS = 2_000_000
CHUNK = 8192
_EPS = np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class SearchResult:
    x: np.ndarray
    value: float
    spacing: float
    tol: float
    grid_points: int
    evaluations: int


def _evaluate(fun: Callable[[np.ndarray], np.ndarray], X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0])
    for s in range(0, X.shape[0], CHUNK):
        out[s : s + CHUNK] = fun(X[s : s + CHUNK])
    return np.where(np.isfinite(out), out, np.inf)


def _grid_local_minima(values: np.ndarray, keep: int) -> list[tuple[int, ...]]:
    """Indices of the ``keep`` lowest axis-wise local minima of a gridded function."""
    mask = np.isfinite(values)
    for axis in range(values.ndim):
        pad = np.pad(values, [(1, 1) if a == axis else (0, 0) for a in range(values.ndim)], constant_values=np.inf)
        lo = np.take(pad, range(0, values.shape[axis]), axis=axis)
        hi = np.take(pad, range(2, values.shape[axis] + 2), axis=axis)
        mask &= (values <= lo) & (values <= hi)
    idx = np.argwhere(mask)
    order = np.argsort(values[mask])[:keep]
    found = [tuple(i) for i in idx[order]]
    best = np.unravel_index(np.argmin(values), values.shape)
    if tuple(best) not in found:
        found.insert(0, tuple(int(b) for b in best))
    return found


def curvature_floor(fun, x: np.ndarray, value: float, lower: np.ndarray, upper: np.ndarray) -> float:
    """Minimizer uncertainty implied by floating-point noise in ``fun``.

    Returns ``sqrt(2 * delta / kappa)`` with ``delta`` a rounding bound on
    the objective and ``kappa`` the smallest axis curvature at ``x``.
    """
    d = x.size
    h = 1e-3 * (1.0 + np.abs(x))
    pts = [x]
    for i in range(d):
        e = np.zeros(d)
        e[i] = h[i]
        pts += [x + e, x - e]
    f = _evaluate(fun, np.clip(np.array(pts), lower, upper))
    curv = np.array([(f[1 + 2 * i] + f[2 + 2 * i] - 2 * f[0]) / h[i] ** 2 for i in range(d)])
    kappa = curv.min()
    if not np.isfinite(kappa) or kappa <= 0.0:
        return float("inf")
    delta = 64.0 * _EPS * max(1.0, abs(value))
    return float(np.sqrt(2.0 * delta / kappa))


def grid_minimize(
    fun: Callable[[np.ndarray], np.ndarray],
    lower,
    upper,
    points: int = 401,
    rounds: int = 40,
    starts: int = 4,
    check_boundary: bool = True,
) -> SearchResult:
    """Minimize a vectorized ``fun: (K, d) -> (K,)`` over the box ``[lower, upper]``.

    A tensor grid (``points`` per axis, capped so the total stays below
    ``MAX_GRID_POINTS``) is scanned, the lowest grid local minima are
    refined by a 3^d pattern search whose step halves ``rounds`` times, and
    the best refined point wins.  The certified tolerance is the larger of
    the final step and the floating-point floor.
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    d = lower.size
    if upper.size != d or np.any(upper <= lower):
        raise ContractViolation("search box must satisfy lower < upper")
    if d > 4:
        raise ContractViolation(f"grid search supports at most 4 variables, got {d}")
    p = int(min(points, np.floor(MAX_GRID_POINTS ** (1.0 / d))))
    axes = [np.linspace(lo, hi, p) for lo, hi in zip(lower, upper)]
    spacing0 = (upper - lower) / (p - 1)
    mesh = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    values = _evaluate(fun, mesh).reshape([p] * d)
    evaluations = values.size
    if not np.isfinite(values).any():
        raise ContractViolation("objective is non-finite on the whole grid")

    stencil = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=d)))
    best_x, best_f, final_h = None, np.inf, None
    for idx in _grid_local_minima(values, starts):
        x = np.array([axes[i][j] for i, j in enumerate(idx)])
        fx = values[idx]
        h = spacing0.copy()
        for _ in range(rounds + 1):
            for _ in range(200):
                cand = np.clip(x + stencil * h, lower, upper)
                fc = _evaluate(fun, cand)
                evaluations += cand.shape[0]
                k = int(np.argmin(fc))
                if fc[k] < fx:
                    x, fx = cand[k], float(fc[k])
                else:
                    break
            h = h / 2.0
        if fx < best_f:
            best_x, best_f, final_h = x, fx, h * 2.0
    if check_boundary and np.any((best_x - lower < spacing0 * 0.5) | (upper - best_x < spacing0 * 0.5)):
        raise OracleBoundaryError(best_x.tolist(), (lower.tolist(), upper.tolist()))
    floor = curvature_floor(fun, best_x, best_f, lower, upper)
    tol = float(max(final_h.max(), floor))
    return SearchResult(best_x, float(best_f), float(final_h.max()), tol, p, evaluations)
