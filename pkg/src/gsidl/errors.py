"""Exception hierarchy shared by every stage of the pipeline."""


class GsiDlError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(GsiDlError):
    """Inconsistent parameters, layouts or manifests."""

    exit_code = 3


class NetworkError(GsiDlError):
    """Structural problem with a network graph (disconnected, bad pipe, ...)."""

    exit_code = 4

    def __init__(self, message, unreachable=()):
        super().__init__(message)
        self.unreachable = list(unreachable)


class InputError(GsiDlError):
    """Invalid numerical input (conflicting measurements, missing classes, ...)."""

    exit_code = 5


class DegenerateDatasetError(InputError):
    """Training data carries no signal (all residuals are zero)."""


class TrainingAbortedError(GsiDlError):
    """Too many columns were rejected during interpolation."""

    exit_code = 6
