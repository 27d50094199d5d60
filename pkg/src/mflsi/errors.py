"""Exception types shared across the package.

Each carries a CLI exit code so the harness can map failures without
string matching.
"""


class MflsiError(Exception):
    exit_code = 1


class InvalidArgument(MflsiError, ValueError):
    exit_code = 2


class NumericFault(MflsiError, ArithmeticError):
    """Non-finite value produced during a computation."""

    exit_code = 3

    def __init__(self, message, index=None, step=None):
        super().__init__(message)
        self.index = index
        self.step = step


class ConvergenceFailure(MflsiError, RuntimeError):
    exit_code = 4

    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class InfeasibleBound(MflsiError, RuntimeError):
    """The infimum in the Lyapunov-route bound has no admissible radius."""

    exit_code = 3
