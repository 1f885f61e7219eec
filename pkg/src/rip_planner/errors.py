from __future__ import annotations


class RipError(Exception):
    """Base class for every error raised by rip_planner."""


class ContractError(RipError, ValueError):
    """A precondition on shapes, lengths or parameter ranges was violated."""


class NumericalDomainError(RipError, ArithmeticError):
    """A primitive produced a non-finite value."""

    def __init__(self, primitive: str, detail: str = ""):
        self.primitive = primitive
        message = f"non-finite value in primitive '{primitive}'"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class TrainingError(RipError):
    """Maximum-likelihood training diverged."""

    def __init__(self, epoch: int, member: int | None = None, detail: str = ""):
        self.epoch = epoch
        self.member = member
        where = f"epoch {epoch}" if member is None else f"member {member}, epoch {epoch}"
        message = f"training diverged at {where}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class PlanningError(RipError):
    """No finite plan could be produced."""


class CalibrationError(RipError):
    """The variance threshold could not be calibrated."""


class UndefinedScoreError(RipError):
    """A score is undefined for the given inputs (e.g. a single class)."""


class ExpertQueryError(RipError):
    """The expert oracle failed to produce a demonstration."""
