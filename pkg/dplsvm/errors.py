class DPLSVMError(Exception):
    """base class, `code` is the CLI exit status"""

    code = 1


class ConfigError(DPLSVMError):
    """raised when a config key is unknown or its value is out of range"""

    code = 2


class InputFileError(DPLSVMError):
    """raised when an input file does not exist"""

    code = 3


class MalformedMatrixError(DPLSVMError):
    """raised when a delimited matrix cannot be parsed or has the wrong shape"""

    code = 4


class ValidationError(DPLSVMError):
    """raised when data or parameters violate an operation's preconditions"""

    code = 5


class NetworkEstimationError(DPLSVMError):
    code = 6

    def __init__(self, message, iteration=None, residual=None):
        super().__init__(message)
        self.iteration = iteration
        self.residual = residual


class ScreeningError(DPLSVMError):
    code = 7


class NotPositiveDefiniteError(DPLSVMError):
    code = 8

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class SamplerError(DPLSVMError):
    code = 9


class SelectionError(DPLSVMError):
    """raised when no validation candidate could be fitted"""

    code = 10
