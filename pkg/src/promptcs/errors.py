"""Exception hierarchy shared by every module."""


class PromptCSError(Exception):
    """Base class for all library errors."""


class InvalidInputError(PromptCSError, ValueError):
    pass


class UnknownConditionError(PromptCSError, KeyError):
    pass


class OutOfBallError(PromptCSError, ValueError):
    pass


class CapacityError(PromptCSError):
    """Raised when exhaustive enumeration would exceed the configured unit cap."""


class DegenerateClassError(PromptCSError):
    """Every sampled secant was zero, so no Christoffel information exists."""


class ModeConflictError(PromptCSError, ValueError):
    pass


class DivergenceError(PromptCSError, FloatingPointError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NoCertificateError(PromptCSError):
    pass
