"""Exception hierarchy. Each class carries the process exit code the CLI maps it to."""


class UnishadeError(Exception):
    exit_code = 1


class InvalidParameterError(UnishadeError, ValueError):
    exit_code = 6


class ContractViolation(UnishadeError, ValueError):
    exit_code = 6


class IngestionError(UnishadeError, ValueError):
    exit_code = 4


class MissingFileError(UnishadeError, FileNotFoundError):
    exit_code = 3


class MalformedMatrixError(IngestionError):
    exit_code = 4


class InconsistentResolutionError(IngestionError):
    exit_code = 4


class UnknownFormatError(IngestionError):
    exit_code = 4


class TruncatedFileError(IngestionError):
    exit_code = 4


class OutOfBoundsError(UnishadeError, ValueError):
    exit_code = 6


class BudgetExceeded(UnishadeError):
    """Raised by the Monte-Carlo renderer when a request exceeds its cost bound."""

    exit_code = 7

    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


class NumericalError(UnishadeError, FloatingPointError):
    exit_code = 5


EXIT_CODES = {
    0: "success",
    1: "unclassified failure",
    2: "usage error (unknown flag or subcommand)",
    3: "missing input file",
    4: "malformed or unsupported input format",
    5: "numerical failure (NaN loss)",
    6: "contract violation / invalid parameter",
    7: "oracle budget exceeded",
    8: "gradient check below pass rate",
}
