"""Exception types; the CLI maps each to an exit code."""


class ValidationError(ValueError):
    """Bad input shape, parameter, or file contents (exit code 2)."""


class NumericalError(ArithmeticError):
    """Non-convergent eigensolver or a non-finite loss (exit code 4)."""
