"""Exception types shared across the package."""


class QbnetError(Exception):
    """Base class for all qbnet errors."""


class DataFormatError(QbnetError):
    """A file or record does not conform to its declared byte/row format."""


class DegenerateTensorError(QbnetError):
    """An operation received a tensor it cannot handle (e.g. all zeros)."""
