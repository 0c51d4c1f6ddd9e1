"""Scenario registry and the sectioned ``key = value`` config format.

A scenario couples a problem builder with solver, oracle and sweep
defaults.  Configs round-trip through :meth:`ScenarioSpec.to_text` and
:meth:`ScenarioSpec.from_text`; unknown sections or keys are rejected.

Precedence when resolving a run: registry defaults, then a config file,
then command-line overrides.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from collections.abc import Callable
from dataclasses import dataclass, field, replace

import numpy as np

from mppi_lab.errors import ContractViolation, UnknownScenarioError
from mppi_lab.problem import CostModel, DynamicsModel, OcpInstance, constant_matrix
from mppi_lab.sampling import CovarianceSpec
from mppi_lab.solver import MppiConfig

# --- problem builders -------------------------------------------------------

_ONE = constant_matrix(1.0)


def _identity(x):
    return x


def quartic_objective(U, c2: float = 16.0, c3: float = 144.0, c4: float = 480.0):
    """``c4/24 U^4 + c3/6 U^3 + c2/2 U^2``."""
    U = np.asarray(U, dtype=float)
    return c4 / 24.0 * U**4 + c3 / 6.0 * U**3 + c2 / 2.0 * U**2


def build_quartic(
    c2: float = 16.0,
    c3: float = 144.0,
    c4: float = 480.0,
    control_weight: float = 1.0,
    lam: float = 1.0,
    sigma: float = 1.0,
) -> OcpInstance:
    """Scalar one-step problem whose deterministic objective is the quartic.

    With ``x+ = x + u + w`` from ``x0 = 0`` and terminal cost
    ``quartic(x) - R x^2 / 2``, ``J(U, 0) = quartic(U)``.
    """
    R = control_weight

    def terminal(x):
        x = x[..., 0]
        return quartic_objective(x, c2, c3, c4) - 0.5 * R * x * x

    dyn = DynamicsModel.input_affine(1, 1, 1, _identity, _ONE, _ONE, step=lambda x, u, w: x + u + w)
    return OcpInstance(
        dyn, CostModel(terminal, R), 1, [0.0], CovarianceSpec.isotropic(sigma, 1, 1), lam, "quartic"
    )


def asymmetric_terminal(x):
    x = x[..., 0]
    return (x - 1.0) ** 6 + x


def symmetric_terminal(x):
    return x[..., 0] ** 6


def affine_step(x, u, w):
    return x - 0.5 * np.sin(3.0 * x) + u + w


def arctan_step(x, u, w):
    return x + np.arctan(u + w)


def build_two_step(
    dynamics: str,
    x0: float = -1.0,
    control_weight: float = 1.0,
    lam: float = 1.0,
    sigma: float = 1.0,
    terminal: str = "asym",
) -> OcpInstance:
    """Two-step scalar problems with zero state cost.

    ``dynamics="affine"``: ``x+ = x - sin(3x)/2 + u + w`` (input affine).
    ``dynamics="arctan"``: ``x+ = x + arctan(u + w)``.
    ``terminal="asym"`` uses ``(x-1)^6 + x``; ``"sym6"`` uses ``x^6``.
    """
    E = {"asym": asymmetric_terminal, "sym6": symmetric_terminal}[terminal]
    if dynamics == "affine":
        dyn = DynamicsModel.input_affine(
            1, 1, 1, lambda x: x - 0.5 * np.sin(3.0 * x), _ONE, _ONE, step=affine_step
        )
    elif dynamics == "arctan":
        dyn = DynamicsModel(1, 1, 1, step=arctan_step)
    else:
        raise ContractViolation(f"unknown dynamics {dynamics!r}")
    name = {"affine": "affine2", "arctan": "arctan2"}[dynamics]
    return OcpInstance(
        dyn,
        CostModel(E, control_weight),
        2,
        [x0],
        CovarianceSpec.isotropic(sigma, 1, 2),
        lam,
        name,
    )


def build_lq(x0: float = 1.0, control_weight: float = 1.0, lam: float = 1.0, sigma: float = 1.0) -> OcpInstance:
    """``x+ = x + u + w``, ``E = x^2/2``, one step."""
    dyn = DynamicsModel.input_affine(1, 1, 1, _identity, _ONE, _ONE, step=lambda x, u, w: x + u + w)
    return OcpInstance(
        dyn,
        CostModel(lambda x: 0.5 * x[..., 0] ** 2, control_weight),
        1,
        [x0],
        CovarianceSpec.isotropic(sigma, 1, 1),
        lam,
        "lq1",
    )


# --- config schema ----------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_floats(text: str) -> tuple[float, ...]:
    text = text.strip()
    return tuple(float(t) for t in text.split(",")) if text else ()


def _parse_ints(text: str) -> tuple[int, ...]:
    text = text.strip()
    return tuple(int(t) for t in text.split(",")) if text else ()


_PARSERS: dict[str, Callable[[str], object]] = {
    "float": float,
    "int": int,
    "str": str.strip,
    "floats": _parse_floats,
    "ints": _parse_ints,
}

SCHEMA: dict[str, dict[str, str]] = {
    "problem": {
        "x0": "float",
        "control_weight": "float",
        "lambda": "float",
        "sigma": "float",
        "c2": "float",
        "c3": "float",
        "c4": "float",
        "terminal": "str",
    },
    "solver": {
        "samples": "int",
        "iterations": "int",
        "shrink_factor": "float",
        "lambda0": "float",
        "sigma0": "str",
        "seed": "int",
        "init_control": "floats",
    },
    "oracle": {
        "box": "floats",
        "grid_points": "int",
        "refine_rounds": "int",
        "quad_order": "int",
        "policy_points": "int",
        "gibbs_box": "floats",
        "abs_tol": "float",
    },
    "sweep": {
        "beta_list": "floats",
        "seeds": "ints",
        "mode": "str",
        "pdf_betas": "floats",
        "pdf_grid": "floats",
    },
}

_COMMON_SOLVER = {
    "samples": 100_000,
    "iterations": 10,
    "shrink_factor": math.sqrt(2.0) / 2.0,
    "lambda0": 1.0,
    "sigma0": "auto",
    "seed": 0,
    "init_control": (0.0,),
}

_COMMON_ORACLE = {
    "box": (-2.0, 2.0),
    "grid_points": 401,
    "refine_rounds": 40,
    "quad_order": 20,
    "policy_points": 801,
    "gibbs_box": (-2.0, 2.0),
    "abs_tol": 1e-10,
}

_SWEEP_BETAS = tuple(float(b) for b in np.geomspace(0.02, 0.2, 8))


@dataclass
class ScenarioSpec:
    """Everything needed to reproduce one scenario's runs."""

    name: str
    problem: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for section in SCHEMA:
            values = getattr(self, section)
            unknown = set(values) - set(SCHEMA[section])
            if unknown:
                raise ContractViolation(f"unknown keys in [{section}]: {sorted(unknown)}")
        if self.name not in REGISTRY:
            raise UnknownScenarioError(self.name, sorted(REGISTRY))

    # -- serialization --

    def to_text(self) -> str:
        lines = ["[scenario]", f"name = {self.name}", ""]
        for section in SCHEMA:
            values = getattr(self, section)
            lines.append(f"[{section}]")
            for key in SCHEMA[section]:
                if key in values:
                    lines.append(f"{key} = {_fmt(values[key])}")
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str) -> ScenarioSpec:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_string(text)
        extra = set(cp.sections()) - set(SCHEMA) - {"scenario"}
        if extra:
            raise ContractViolation(f"unknown config sections: {sorted(extra)}")
        if not cp.has_option("scenario", "name") or set(cp["scenario"]) != {"name"}:
            raise ContractViolation("[scenario] must contain exactly the key 'name'")
        sections = {}
        for section, keys in SCHEMA.items():
            values = {}
            if cp.has_section(section):
                for key, raw in cp[section].items():
                    if key not in keys:
                        raise ContractViolation(f"unknown key {key!r} in [{section}]")
                    values[key] = _PARSERS[keys[key]](raw)
            sections[section] = values
        return cls(cp["scenario"]["name"].strip(), **sections)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    # -- resolution --

    def merged(self, **overrides) -> ScenarioSpec:
        """Copy with ``section__key=value`` overrides applied (``None`` values skipped)."""
        out = replace(
            self,
            problem=dict(self.problem),
            solver=dict(self.solver),
            oracle=dict(self.oracle),
            sweep=dict(self.sweep),
        )
        for full_key, value in overrides.items():
            if value is None:
                continue
            section, key = full_key.split("__", 1)
            if key not in SCHEMA.get(section, {}):
                raise ContractViolation(f"unknown override {full_key!r}")
            getattr(out, section)[key] = value
        out.__post_init__()
        return out

    def build_instance(self) -> OcpInstance:
        return REGISTRY[self.name].builder(self.problem)

    def mppi_config(self, inst: OcpInstance | None = None, workers: int = 1) -> MppiConfig:
        s = self.solver
        inst = inst or self.build_instance()
        sigma0 = s.get("sigma0", "auto")
        cov0 = None if sigma0 == "auto" else CovarianceSpec.isotropic(float(sigma0), inst.n_w, inst.horizon)
        return MppiConfig(
            samples=int(s["samples"]),
            iterations=int(s["iterations"]),
            shrink_factor=float(s["shrink_factor"]),
            lambda0=float(s["lambda0"]),
            sigma0=cov0,
            init_control=tuple(s.get("init_control", (0.0,))),
            seed=int(s["seed"]),
            workers=workers,
        )

    @property
    def box(self) -> tuple[float, float]:
        return tuple(self.oracle["box"])

    @property
    def gibbs_box(self) -> tuple[float, float]:
        return tuple(self.oracle["gibbs_box"])


@dataclass(frozen=True)
class ScenarioEntry:
    builder: Callable[[dict], OcpInstance]
    defaults: Callable[[], ScenarioSpec]
    description: str


def _problem_kwargs(p: dict, allowed: tuple[str, ...]) -> dict:
    rename = {"lambda": "lam"}
    return {rename.get(k, k): v for k, v in p.items() if k in allowed}


def _quartic_builder(p: dict) -> OcpInstance:
    return build_quartic(**_problem_kwargs(p, ("c2", "c3", "c4", "control_weight", "lambda", "sigma")))


def _two_step_builder(dynamics: str):
    def build(p: dict) -> OcpInstance:
        kw = _problem_kwargs(p, ("x0", "control_weight", "lambda", "sigma", "terminal"))
        return build_two_step(dynamics, **kw)

    return build


def _lq_builder(p: dict) -> OcpInstance:
    return build_lq(**_problem_kwargs(p, ("x0", "control_weight", "lambda", "sigma")))


def _spec(name: str, problem: dict, solver=None, oracle=None, sweep=None) -> Callable[[], ScenarioSpec]:
    def make() -> ScenarioSpec:
        return ScenarioSpec(
            name,
            dict(problem),
            {**_COMMON_SOLVER, **(solver or {})},
            {**_COMMON_ORACLE, **(oracle or {})},
            {"beta_list": _SWEEP_BETAS, "seeds": (0, 1, 2, 3, 4), "mode": "exact", **(sweep or {})},
        )

    return make


_TWO_STEP_PROBLEM = {"x0": -1.0, "control_weight": 1.0, "lambda": 1.0, "sigma": 1.0, "terminal": "asym"}

REGISTRY: dict[str, ScenarioEntry] = {
    "quartic": ScenarioEntry(
        _quartic_builder,
        _spec(
            "quartic",
            {"c2": 16.0, "c3": 144.0, "c4": 480.0, "control_weight": 1.0, "lambda": 1.0, "sigma": 1.0},
            sweep={"pdf_betas": (1.0, 0.5, 0.25, 0.125), "pdf_grid": (-2.0, 2.0, 4001.0)},
        ),
        "scalar quartic objective 20U^4 + 24U^3 + 8U^2 (global min 0, secondary basin at -1/2)",
    ),
    "affine2": ScenarioEntry(
        _two_step_builder("affine"),
        _spec("affine2", _TWO_STEP_PROBLEM, oracle={"gibbs_box": (-10.0, 10.0)}),
        "two-step input-affine dynamics x - sin(3x)/2 + u + w, terminal (x-1)^6 + x",
    ),
    "arctan2": ScenarioEntry(
        _two_step_builder("arctan"),
        _spec("arctan2", _TWO_STEP_PROBLEM, oracle={"gibbs_box": (-10.0, 10.0)}),
        "two-step nonlinear dynamics x + arctan(u + w), terminal (x-1)^6 + x",
    ),
    "lq1": ScenarioEntry(
        _lq_builder,
        _spec("lq1", {"x0": 1.0, "control_weight": 1.0, "lambda": 1.0, "sigma": 1.0}, oracle={"gibbs_box": (-10.0, 10.0)}),
        "one-step linear-quadratic x+ = x + u + w, E = x^2/2",
    ),
}


def get_scenario(name: str) -> ScenarioSpec:
    try:
        return REGISTRY[name].defaults()
    except KeyError:
        raise UnknownScenarioError(name, sorted(REGISTRY)) from None


def scenario_names() -> list[str]:
    return sorted(REGISTRY)
