"""Exception hierarchy shared by all modules."""


class StochInvError(Exception):
    """Base class for library errors."""


class InvalidArgumentError(StochInvError, ValueError):
    pass


class NotFoundError(StochInvError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DivergedPathError(StochInvError):
    """A simulated state became non-finite or left the divergence radius."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DivergedFieldError(DivergedPathError):
    pass


class DomainExitError(StochInvError):
    pass


class InversionError(StochInvError):
    """Newton inversion of the jump map did not converge."""


class SingularJumpError(InversionError):
    pass


class DegenerateJacobianError(StochInvError):
    pass


class OracleFailureError(StochInvError):
    pass


class StepSizeError(StochInvError):
    def __init__(self, message, suggested_n_steps=None):
        super().__init__(message)
        self.suggested_n_steps = suggested_n_steps


class RatioUndefinedError(StochInvError):
    pass


class ConfigError(StochInvError):
    pass
