"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class TacsimError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(TacsimError, ValueError):
    """A caller-supplied argument violates a documented precondition."""


class MeshFormatError(TacsimError):
    """A mesh file could not be parsed.

    Carries the offending path and 1-based line number.
    """

    def __init__(self, path: str, line: int, reason: str):
        self.path = str(path)
        self.line = int(line)
        self.reason = reason
        super().__init__(f"{path}:{line}: {reason}")


class ConfigError(TacsimError):
    """A scene or run configuration is inconsistent or incomplete."""


class SolverStallError(TacsimError):
    """The implicit solver could not make progress.

    Carries the per-step diagnostics record collected up to the failure.
    """

    def __init__(self, message: str, diagnostics=None):
        self.diagnostics = diagnostics
        super().__init__(message)


class CalibrationError(TacsimError):
    """Optical calibration failed to produce a usable lookup table."""


class NumericalError(TacsimError):
    """A state evaluation produced non-finite values.

    Carries the id of the offending element when known.
    """

    def __init__(self, message: str, element_id: int = -1):
        self.element_id = int(element_id)
        super().__init__(message)
