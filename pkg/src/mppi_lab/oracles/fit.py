"""Log-log least-squares slope estimation for convergence orders."""

from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np

from mppi_lab.errors import InsufficientDataError

log = logging.getLogger(__name__)

MIN_POINTS = 4


class SlopeFit(NamedTuple):
    slope: float
    intercept: float
    residual: float
    n_used: int


def slope_fit(points, window: tuple[float, float] | None = None) -> SlopeFit:
    """Fit ``log error = slope * log beta + intercept`` on the points inside ``window``.

    ``points`` is a sequence of ``(beta, error)``.  Nonpositive errors are
    dropped with a warning; ``residual`` is the RMS deviation in log space.
    """
    arr = np.asarray(points, dtype=float).reshape(-1, 2)
    beta, err = arr[:, 0], arr[:, 1]
    if window is not None:
        inside = (beta >= window[0]) & (beta <= window[1])
        beta, err = beta[inside], err[inside]
    ok = (err > 0) & np.isfinite(err) & (beta > 0)
    if not ok.all():
        log.warning("slope_fit: excluding %d point(s) with nonpositive or non-finite error", int((~ok).sum()))
    beta, err = beta[ok], err[ok]
    if beta.size < MIN_POINTS:
        raise InsufficientDataError(f"need at least {MIN_POINTS} usable points, got {beta.size}")
    x, y = np.log(beta), np.log(err)
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ np.array([slope, intercept]) - y) ** 2)))
    return SlopeFit(float(slope), float(intercept), resid, int(beta.size))
