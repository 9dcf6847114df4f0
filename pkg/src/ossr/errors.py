"""Exception hierarchy shared by every module.

``DomainError`` subclasses map to CLI exit code 1; ``UsageError`` maps to 2.
"""


class DomainError(Exception):
    """Base class for failures caused by data or numerical state."""


class DataIntegrityError(DomainError, ValueError):
    """Input data is malformed (non-finite samples, wrong shapes)."""


class DatasetParseError(DomainError, ValueError):
    def __init__(self, message, row=None, path=None):
        self.row = row
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        prefix = f"{': '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class FitError(DomainError, ValueError):
    """A statistical fit cannot be performed on the supplied data."""


class NotApplicable(DomainError):
    """The requested method is undefined for this configuration (e.g. entropy with K=1)."""


class DivergenceError(DomainError, FloatingPointError):
    """Training produced a non-finite loss, activation or gradient."""


class UsageError(Exception):
    """API or CLI misuse (wrong call order, missing arguments)."""
