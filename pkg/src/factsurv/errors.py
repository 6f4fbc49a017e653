"""Exception hierarchy shared across the package.

Every error carries a short machine-readable ``category`` and the process
exit code the CLI maps it to.
"""


class FactError(Exception):
    category = "internal"
    exit_code = 9


class InvalidArgument(FactError, ValueError):
    category = "invalid-argument"
    exit_code = 7


class DegenerateTest(FactError, ValueError):
    category = "degenerate-test"
    exit_code = 8


class UndefinedMetric(FactError, ValueError):
    category = "undefined-metric"
    exit_code = 8


class DegenerateWeights(FactError, ValueError):
    category = "degenerate-weights"
    exit_code = 8


class Diverged(FactError, ArithmeticError):
    """Cox fit hit a non-finite likelihood; ``beta`` is the last finite iterate."""

    category = "diverged"
    exit_code = 6

    def __init__(self, message, beta=None):
        super().__init__(message)
        self.beta = beta


class NumericFailure(FactError, ArithmeticError):
    category = "numeric-failure"
    exit_code = 6


class TrainingFailure(FactError, RuntimeError):
    category = "training-failure"
    exit_code = 6

    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class UnknownDriver(FactError, KeyError):
    category = "unknown-driver"
    exit_code = 7

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown driver"


class SchemaError(FactError, ValueError):
    category = "schema"
    exit_code = 4


class RowError(SchemaError):
    category = "row"

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class OrderingError(SchemaError):
    category = "ordering"


class ConfigError(FactError, ValueError):
    category = "config"
    exit_code = 5


class MissingFile(FactError, FileNotFoundError):
    category = "missing-file"
    exit_code = 3
