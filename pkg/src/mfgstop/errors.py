"""Exception types shared across the package.

The CLI maps these onto exit codes: config parsing failures exit 2,
validation failures exit 3, solver failures exit 4, verification
failures exit 5.
"""


class MfgStopError(Exception):
    """Base class for all package errors."""


class ConfigParseError(MfgStopError):
    """A config file is missing, unreadable, or syntactically malformed."""


class ValidationError(MfgStopError):
    """Inputs are well-formed but violate a documented precondition."""


class SolverError(MfgStopError):
    """A numerical routine failed in a way that invalidates its output."""


class VerificationFailure(MfgStopError):
    """An independent check of solver output did not pass."""


# -- validation ---------------------------------------------------------

class NonPositiveHorizon(ValidationError):
    pass


class EmptyDomain(ValidationError):
    pass


class DegenerateGrid(ValidationError):
    pass


class EllipticityViolation(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class RhoOutOfRange(ValidationError):
    pass


class MomentOutOfRange(ValidationError):
    pass


class MissingDerivative(ValidationError):
    pass


class MissingAntiderivative(ValidationError):
    pass


class SupportViolation(ValidationError):
    pass


class InstanceTooLarge(ValidationError):
    pass


# -- solver -------------------------------------------------------------

class SingularSystem(SolverError):
    pass


class SimplexIterationLimit(SolverError):
    pass


class NonConcaveDetected(SolverError):
    pass
