"""Exception hierarchy shared across the package.

Exit-code mapping for the CLI lives in :mod:`wealy.cli`; everything here is
importable without pulling in numpy.
"""


class WealyError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(WealyError):
    """Input data violates a documented invariant (non-finite values, bad field)."""


class ConfigurationError(WealyError):
    """A configuration object is internally inconsistent."""


class FormatError(WealyError):
    """A binary or text file does not match its declared format."""


class CorruptionError(FormatError):
    """A file matches its format header but the payload is inconsistent."""


class StorageError(WealyError):
    """An I/O operation failed."""


class ShapeError(WealyError):
    """Array dimensions do not match the operation's contract."""


class NumericError(WealyError):
    """A non-finite value appeared where finite math was required."""


class DomainError(WealyError):
    """An argument lies outside the mathematical domain of the operation."""


class IdLookupError(WealyError):
    """A referenced track id is unknown to the receiving structure."""


class AlignmentError(WealyError):
    """Two distance matrices cannot be combined because their id lists differ."""
