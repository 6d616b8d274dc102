"""Exception types raised across the package."""


class BotMosaicError(Exception):
    """Base class for all package errors."""


class ParameterError(BotMosaicError, ValueError):
    """A parameter is outside its valid range."""


class FeasibilityError(ParameterError):
    """Watermark parameters cannot produce a valid insertion plan."""


class AllocationError(BotMosaicError):
    """Interval totals cannot be split across flows within the rate cap."""


class FormatError(BotMosaicError, ValueError):
    """A key, trace or config file is malformed.

    ``line`` is the 1-based line number of the offending input, when known.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class DegenerateSampleError(BotMosaicError, ValueError):
    """Samples have zero variance and overlapping support."""
