"""Exception hierarchy.

Every error carries a short stable ``code`` that the command-line entry
point prints as a prefix on stderr.
"""


class MilError(Exception):
    code = "E100"


class DimensionError(MilError, ValueError):
    code = "E101"


class InputError(MilError, ValueError):
    code = "E102"


class ParseError(MilError, ValueError):
    code = "E103"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(MilError, ValueError):
    code = "E104"


class MetricUndefinedError(MilError, ValueError):
    code = "E105"


class DivergenceError(MilError, ArithmeticError):
    code = "E106"

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class UsageError(MilError):
    code = "E107"
