"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code and the single-token prefix that is
written to stderr when a command fails.
"""


class BnnGpError(Exception):
    exit_code = 1
    code = "E_INTERNAL"


class InputError(BnnGpError, ValueError):
    """Shapes or dimensions do not line up."""

    exit_code = 3
    code = "E_INPUT"


class ParameterError(BnnGpError, ValueError):
    """Hyperparameters outside their admissible domain."""

    exit_code = 2
    code = "E_PARAM"


class ConfigError(BnnGpError, ValueError):
    exit_code = 2
    code = "E_CONFIG"


class DataError(BnnGpError, ValueError):
    exit_code = 3
    code = "E_DATA"


class NumericError(BnnGpError, ArithmeticError):
    """A factorization or optimization step produced unusable numbers."""

    exit_code = 4
    code = "E_NUMERIC"
