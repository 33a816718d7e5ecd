"""Exception hierarchy shared by the solvers and the CLI."""


class RiskHJBError(Exception):
    """Base class for all package errors."""


class ValidationError(RiskHJBError):
    """Malformed problem data or configuration (CLI exit code 2)."""

    def __init__(self, message, field=None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class NumericalError(RiskHJBError):
    """A numerical procedure failed (CLI exit code 3)."""


class NoCompatibleLambda(ValidationError):
    pass


class OutsideDomain(ValidationError):
    pass


class InvalidStart(ValidationError):
    pass


class NonpositiveStep(ValidationError):
    pass


class InsufficientNodes(ValidationError):
    pass


class MissingArtifact(ValidationError):
    pass


class TimeOutOfRange(ValidationError):
    pass


class StepFailure(NumericalError):
    pass


class PositivityLoss(NumericalError):
    pass


class LinearSolveFailure(NumericalError):
    pass


class DegenerateWeights(NumericalError):
    pass
