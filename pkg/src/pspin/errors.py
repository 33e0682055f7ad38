"""Exception hierarchy.

Configuration and domain problems subclass ``ValueError``; failures of a
numerical procedure subclass :class:`NumericalError`. The CLI maps the two
families to different exit codes.
"""


class PspinError(Exception):
    pass


class NumericalError(PspinError):
    """A numerical procedure could not deliver its stated accuracy."""


class QuadratureError(NumericalError):
    def __init__(self, message, coarse=None, refined=None):
        super().__init__(message)
        self.coarse = coarse
        self.refined = refined


class ConvergenceError(NumericalError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class BracketError(NumericalError):
    pass


class EnergyDriftError(NumericalError):
    pass


class MemoryBudgetError(PspinError, ValueError):
    def __init__(self, message, required_bytes):
        super().__init__(message)
        self.required_bytes = required_bytes


class EnumerationCapError(PspinError, ValueError):
    pass


class EmptyConstraintError(PspinError, ValueError):
    pass


class CacheIntegrityError(PspinError):
    pass
