"""MPPI solvers for discrete-time optimal control with high-accuracy reference oracles."""

from mppi_lab.problem import (
    CostModel,
    DynamicsModel,
    OcpInstance,
    check_assumption1,
    overall_cost,
    path_cost,
    rollout,
    to_canonical,
    value_of,
)
from mppi_lab.sampling import CovarianceSpec, SampleBatch, draw_batch, importance_correction, log_density
from mppi_lab.scenarios import ScenarioSpec, get_scenario, scenario_names
from mppi_lab.solver import (
    MppiConfig,
    SolveReport,
    WeightVector,
    cls_mppi_u0,
    deterministic_mppi_solve,
    softmin_weights,
    standard_mppi_step,
)

__all__ = [
    "CostModel",
    "CovarianceSpec",
    "DynamicsModel",
    "MppiConfig",
    "OcpInstance",
    "SampleBatch",
    "ScenarioSpec",
    "SolveReport",
    "WeightVector",
    "check_assumption1",
    "cls_mppi_u0",
    "deterministic_mppi_solve",
    "draw_batch",
    "get_scenario",
    "importance_correction",
    "log_density",
    "overall_cost",
    "path_cost",
    "rollout",
    "scenario_names",
    "softmin_weights",
    "standard_mppi_step",
    "to_canonical",
    "value_of",
]
