"""Exception types. The CLI maps each to an exit code."""


class MFGError(Exception):
    exit_code = 1


class ValidationError(MFGError, ValueError):
    exit_code = 2


class ConvergenceError(MFGError):
    """Iteration budget exhausted; ``history`` holds the residual trace."""

    exit_code = 3

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class DegeneracyError(ConvergenceError):
    pass


class SingularityError(MFGError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
