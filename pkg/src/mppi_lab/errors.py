"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class MppiLabError(Exception):
    """Base class for all package errors."""


class ContractViolation(MppiLabError, ValueError):
    """An argument does not satisfy a documented precondition."""


class NumericOverflowError(MppiLabError, ArithmeticError):
    """A rollout produced a non-finite state."""

    def __init__(self, step: int, message: str | None = None) -> None:
        self.step = step
        super().__init__(message or f"non-finite state produced at step k={step}")


class UnsupportedModelError(MppiLabError):
    """The operation requires a model kind that was not supplied."""


class TransformationInvalidError(MppiLabError):
    """The canonical input-affine transformation does not apply."""


class CovarianceInvalidError(MppiLabError, ValueError):
    """A covariance matrix is not symmetric positive definite."""


class NoValidSamplesError(MppiLabError):
    """Every sampled trajectory had a non-finite cost."""


class OracleBoundaryError(MppiLabError):
    """A reference minimizer sits on the boundary of its search box."""

    def __init__(self, point, box, message: str | None = None) -> None:
        self.point = point
        self.box = box
        super().__init__(
            message
            or f"argmin {point!r} touches the search box {box!r}; enlarge the box"
        )


class GridExtentError(MppiLabError):
    """A grid does not cover the region the computation needs."""

    def __init__(self, required: tuple[float, float], message: str | None = None) -> None:
        self.required = required
        super().__init__(
            message or f"grid too narrow; required extent [{required[0]:.6g}, {required[1]:.6g}]"
        )


class IntegrationBudgetError(MppiLabError):
    """Adaptive quadrature ran out of subdivisions before meeting its tolerance."""


class InsufficientDataError(MppiLabError, ValueError):
    """Too few usable points for a fit."""


class UnknownScenarioError(MppiLabError, KeyError):
    """A scenario name is not in the registry."""

    def __init__(self, name: str, known: list[str]) -> None:
        self.name = name
        self.known = known
        super().__init__(f"unknown scenario {name!r}; registered: {', '.join(known)}")

    def __str__(self) -> str:
        return self.args[0]
