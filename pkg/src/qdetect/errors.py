"""Exception hierarchy shared by all qdetect modules.

Every error carries the CLI exit code it maps to, so the command layer can
translate failures without a lookup table.
"""


class QDetectError(Exception):
    exit_code = 4


class ConfigError(QDetectError, ValueError):
    exit_code = 2

    def __init__(self, message, field=None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class CapabilityError(QDetectError):
    """Operation not supported for the given model family."""

    exit_code = 3


class NonPositiveSigma(QDetectError, ValueError):
    exit_code = 2


class SubclassViolation(QDetectError, ValueError):
    exit_code = 2


class StateUnderflow(QDetectError):
    pass


class QuadratureFailure(QDetectError):
    pass


class NotInvertible(QDetectError):
    pass


class NoRoot(QDetectError):
    pass


class NoConvergence(QDetectError):
    pass


class StiffnessFailure(QDetectError):
    pass


class DegenerateColumn(QDetectError):
    pass


class NonMonotoneScheme(UserWarning):
    """Discrete operator is not an M-matrix; refine the grid."""
