"""Exception hierarchy.

Every error raised by the package derives from :class:`PanelCorrError` so
callers (and the CLI) can separate numerical failures from configuration
mistakes.
"""


class PanelCorrError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ConfigError(PanelCorrError, ValueError):
    """Invalid model, constraint or run configuration."""

    exit_code = 2


class NumericalError(PanelCorrError, ArithmeticError):
    """A numerical routine failed."""

    exit_code = 3


# -- data / model -------------------------------------------------------------

class BadFamilyData(ConfigError):
    pass


class NonFiniteIndex(NumericalError):
    pass


class EmptyPanel(ConfigError):
    pass


class UnbalancedPanel(ConfigError):
    def __init__(self, message, gaps=None):
        super().__init__(message)
        self.gaps = gaps or {}


class DuplicateCell(ConfigError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class NonNumericField(ConfigError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


# -- solvers ------------------------------------------------------------------

class SingularHessian(NumericalError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class NonNegativeHessian(NumericalError):
    pass


class TauTooLarge(ConfigError):
    pass


class RankDeficientConstraint(ConfigError):
    pass


class IndefiniteHessian(NumericalError):
    pass


class DegenerateVariance(NumericalError):
    pass


class SingularBlock(NumericalError):
    pass
