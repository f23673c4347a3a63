"""Exception hierarchy.

Every error carries a ``category`` used by the command-line front end to
build its ``error:<category>:`` prefix.
"""


class ArchgenError(ValueError):
    category = "validation"


class DimensionError(ArchgenError):
    category = "dimension"


class EmptyInputError(ArchgenError):
    category = "empty-input"


class InsufficientDataError(ArchgenError):
    category = "insufficient-data"


class SizeError(ArchgenError):
    category = "size"


class ParseError(ArchgenError):
    category = "parse"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConvergenceError(ArchgenError):
    category = "convergence"

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
