"""Exception hierarchy shared by every layer of the toolkit."""


class DcoxError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(DcoxError):
    """Invalid model specification or run configuration."""


class IngestionError(DcoxError):
    pass


class MissingColumn(IngestionError):
    def __init__(self, name, path=None):
        self.name = name
        where = f" in {path}" if path else ""
        super().__init__(f"variable {name!r} not found{where}")


class EmptyDataset(IngestionError):
    pass


class NonPositiveTime(IngestionError):
    pass


class SizeMismatch(DcoxError):
    pass


class NumericError(DcoxError):
    """Failure of the numerical core (overflow, singular system, ...)."""


class NonFiniteIntermediate(NumericError):
    pass


class NonFiniteLikelihood(NumericError):
    pass


class DegenerateRiskSet(NumericError):
    pass


class SingularHessian(NumericError):
    pass


class NotSymmetric(NumericError):
    pass


class NonPositiveVariance(NumericError):
    pass


class MaxIterationsExceeded(NumericError):
    """Newton iterations hit ``max_iter`` without meeting XCONV.

    The partially completed fit is attached as ``result`` so callers can
    still write the iteration history.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ProtocolError(DcoxError):
    """Anything that goes wrong in the center/partner exchange."""


class MissingPartnerPayload(ProtocolError):
    pass


class GridMismatch(ProtocolError):
    pass


class MailboxCollision(ProtocolError):
    pass


class IoFailure(ProtocolError):
    pass


class Timeout(ProtocolError):
    pass


class MalformedPayload(ProtocolError):
    pass


class PartnerFailure(ProtocolError):
    """A partner reported an error instead of the expected reply."""

    def __init__(self, partner_id, reason):
        self.partner_id = partner_id
        self.reason = reason
        super().__init__(f"partner {partner_id} failed: {reason}")


EXIT_CONVERGED = 0
EXIT_NOT_CONVERGED = 2
EXIT_PROTOCOL = 3
EXIT_NUMERIC = 4
EXIT_CONFIG = 5


def exit_code_for(exc: BaseException) -> int:
    """Map an exception onto the command-line exit-code contract."""
    if isinstance(exc, MaxIterationsExceeded):
        return EXIT_NOT_CONVERGED
    if isinstance(exc, (ConfigError, IngestionError, SizeMismatch)):
        return EXIT_CONFIG
    if isinstance(exc, ProtocolError):
        return EXIT_PROTOCOL
    return EXIT_NUMERIC
