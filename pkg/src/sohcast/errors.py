"""Exception hierarchy.

Everything raised on bad input derives from :class:`DataError` so the CLI can
map it to a single exit code.
"""


class SohcastError(Exception):
    pass


class DataError(SohcastError, ValueError):
    pass


class EmptyInput(DataError):
    pass


class UnsortedInput(DataError):
    pass


class InsufficientData(DataError):
    pass


class NoSuchChannel(DataError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class UnboundedGap(DataError):
    pass


class NotDecomposable(DataError):
    pass


class NoOscillatoryComponent(DataError):
    pass


class LeakageError(DataError):
    pass


class ShapeError(DataError):
    pass


class InsufficientTrainingData(InsufficientData):
    pass


class DegenerateSample(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(SohcastError):
    pass
