"""Exception hierarchy shared across the package.

The CLI maps these onto its stable exit codes: config 2, data 3,
numerics 4, compatibility 5. Contract-style errors (shape misuse,
calling backward on a non-scalar) are programming errors and are
allowed to surface as plain tracebacks.
"""


class RaimkitError(Exception):
    """Base class for all package errors."""


class ShapeError(RaimkitError):
    """Operand shapes violate an operation's contract."""


class ContractError(RaimkitError):
    """An operation was invoked outside its preconditions."""


class DomainError(RaimkitError):
    """Input values are outside the mathematical domain of an operation."""


class ConfigError(RaimkitError):
    """Invalid or unknown configuration. CLI exit code 2."""


class DataError(RaimkitError):
    """Malformed or ineligible input data. CLI exit code 3."""


class MetricError(DataError):
    """A requested metric is undefined for the given inputs."""


class NumericsError(RaimkitError):
    """NaN/Inf or divergence detected. CLI exit code 4."""


class CompatibilityError(RaimkitError):
    """Checkpoint/config/task mismatch. CLI exit code 5."""
