"""Exception types shared across the package.

``ValidationError`` and its subclasses mean the caller handed over bad input
(the CLI maps them to exit code 2); anything else is a runtime failure.
"""


class LimbnetError(Exception):
    pass


class ValidationError(LimbnetError, ValueError):
    pass


class ShapeError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


# -- dataset parsing

class ParseError(ValidationError):
    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class MissingColumnError(ParseError):
    def __init__(self, column: str, path=None, line: int | None = 1):
        self.column = column
        super().__init__(f"missing column {column!r}", path, line)


class NonNumericError(ParseError):
    pass


class RowWidthError(ParseError):
    pass


class SampleRateError(ParseError):
    pass


class DuplicateRecordingError(ValidationError):
    pass


class UnknownActivityError(ValidationError):
    pass


class CompletenessError(ValidationError):
    pass


# -- splitting

class SplitError(ValidationError):
    pass


class OverlapError(SplitError):
    pass


class CohortMismatchError(SplitError):
    pass


class UnknownSubjectError(SplitError):
    pass


# -- weight files

class WeightFileError(LimbnetError):
    pass


class BadMagicError(WeightFileError):
    pass


class VersionMismatchError(WeightFileError):
    pass


class CountMismatchError(WeightFileError):
    pass


class ChecksumError(WeightFileError):
    pass
