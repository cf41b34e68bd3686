"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, everything else
derived from UbpError -> 1.
"""


class UbpError(Exception):
    """Base class for all package errors."""


class ContractViolation(UbpError):
    """An operation was called with arguments violating its precondition."""


class DegenerateInput(UbpError):
    """Input is structurally valid but numerically degenerate (zero row, zero variance)."""


class OracleFailure(UbpError):
    """A numerical oracle (finite differences) hit a non-finite evaluation."""


class DataError(UbpError):
    """Dataset content is inconsistent with what the pipeline requires."""


class FormatError(DataError):
    """A binary file does not conform to its declared layout."""


class ConfigError(UbpError):
    """A job configuration is invalid or contains unknown keys."""


class NotReadyError(UbpError):
    """A statistic was requested before its warmup period completed."""
