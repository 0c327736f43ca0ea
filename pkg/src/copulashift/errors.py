"""Shared exception types.

Every precondition failure in the package raises one of these, so callers
can distinguish "you called it wrong" (ContractViolation and subclasses)
from genuine runtime faults.
"""


class ContractViolation(ValueError):
    """An operation was called with arguments that violate its contract."""


class ShapeError(ContractViolation):
    """Operand shapes are incompatible for an operation.

    Carries the operation name and both shapes so the message pinpoints
    the offending node in a larger graph.
    """

    def __init__(self, op: str, shape_a, shape_b):
        self.op = op
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        super().__init__(f"{op}: incompatible shapes {self.shape_a} and {self.shape_b}")


class DomainError(ContractViolation):
    """A value lies outside the mathematical domain of an operation."""
