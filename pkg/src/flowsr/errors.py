"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes (config 2, data 3, numeric 4).
"""


class FlowSRError(Exception):
    """Base class for all package errors."""


class DomainError(FlowSRError, ValueError):
    """An argument is outside the operation's domain."""


class ConfigError(FlowSRError):
    """A run configuration is malformed or inconsistent."""


class DataError(FlowSRError):
    """Input data could not be read or has the wrong structure."""


class FormatError(DataError):
    """A binary container (WAV, spectrogram dump, checkpoint) is malformed."""


class UnsupportedFormatError(DataError):
    """A container is well formed but uses an encoding we do not handle."""


class ConfigMismatchError(DataError):
    """A checkpoint was written for a different model configuration."""


class NumericError(FlowSRError, ArithmeticError):
    """A computation produced non-finite values."""


class IntegrationError(NumericError):
    """ODE integration left the finite range."""


class TrainingError(NumericError):
    """Training produced a non-finite loss.

    ``diagnostics`` carries whatever the training loop knew at the time
    (step, batch indices, flow steps).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
