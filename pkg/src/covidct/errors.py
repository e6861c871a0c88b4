"""Exception hierarchy shared by every stage of the pipeline."""


class CovidCtError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgument(CovidCtError, ValueError):
    pass


class ParseError(CovidCtError, ValueError):
    """A file could not be parsed (bad magic, truncated header, ...)."""


class UnsupportedFormat(CovidCtError, ValueError):
    """A well-formed file uses a variant we do not handle (e.g. 16-bit PGM)."""


class IoError(CovidCtError, OSError):
    pass


class DegenerateHistogram(CovidCtError, ValueError):
    """Raised when a thresholding method sees fewer than two intensities."""


class ShapeError(CovidCtError, ValueError):
    pass


class FormatError(CovidCtError, ValueError):
    """Weight file has the wrong magic, version or is truncated."""


class DivergenceError(CovidCtError, ArithmeticError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class DatasetIndexError(CovidCtError, IndexError):
    """Dataset layout is inconsistent (e.g. a scan id appears twice)."""
