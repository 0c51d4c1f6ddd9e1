"""Reference solvers, exact Gibbs-mean integrals, quadrature and slope fitting."""

from mppi_lab.oracles.cache import OracleCache, cache_key
from mppi_lab.oracles.fit import SlopeFit, slope_fit
from mppi_lab.oracles.gibbs import (
    DensityCurve,
    GibbsMode,
    find_mode,
    gibbs_energy,
    gibbs_mean,
    optimal_density_curve,
)
from mppi_lab.oracles.ocp import (
    OracleSolution,
    PolicyTable,
    cls_ocp_oracle,
    det_ocp_oracle,
    ols_ocp_oracle,
)
from mppi_lab.oracles.quadrature import QuadratureRule, gauss_hermite, noise_rule
from mppi_lab.oracles.search import SearchResult, grid_minimize

__all__ = [
    "DensityCurve",
    "GibbsMode",
    "OracleCache",
    "OracleSolution",
    "PolicyTable",
    "QuadratureRule",
    "SearchResult",
    "SlopeFit",
    "cache_key",
    "cls_ocp_oracle",
    "det_ocp_oracle",
    "find_mode",
    "gauss_hermite",
    "gibbs_energy",
    "gibbs_mean",
    "grid_minimize",
    "noise_rule",
    "ols_ocp_oracle",
    "optimal_density_curve",
    "slope_fit",
]
