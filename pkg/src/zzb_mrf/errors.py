"""Exception types shared across the package.

The CLI maps each class to a distinct exit status.
"""


class PreconditionError(ValueError):
    """An input violates a documented invariant or precondition."""


class ConstraintViolationError(PreconditionError):
    """A schedule violates the box or slew constraints of a design problem."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = ", ".join(f"{v.kind}@{v.index} (margin {v.margin:.3g})" for v in self.violations[:10])
        more = "" if len(self.violations) <= 10 else f" ... +{len(self.violations) - 10} more"
        super().__init__(f"schedule infeasible: {lines}{more}")


class NumericError(ArithmeticError):
    """A computation produced a non-finite or degenerate value."""

    def __init__(self, message, index=None):
        self.index = index
        if index is not None:
            message = f"{message} (index {index})"
        super().__init__(message)


class NonIdentifiableError(NumericError):
    """The signal carries no first-order information about the parameter."""


class ParseError(ValueError):
    """A file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
