"""
Exception hierarchy for the domain shift toolkit.
Every error a user can trigger with bad data or bad parameters derives from
DomainShiftError, which the CLI maps to exit code 1.
"""


class DomainShiftError(ValueError):
    """Base class for all data and parameter errors."""


class DatasetError(DomainShiftError):
    """Missing or empty dataset directories, unpaired file stems."""


class FormatError(DomainShiftError):
    """Malformed or unsupported file contents."""


class ValidationError(DomainShiftError):
    """Parameter or value outside its documented range."""


class ConstructionNotFound(DomainShiftError):
    """No augmentation operation produced a shift inside the requested interval."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report
