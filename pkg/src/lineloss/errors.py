"""Exception types raised across the package."""


class LineLossError(Exception):
    """Base class for user-facing errors (the CLI prints these as one line)."""


class DimensionError(LineLossError, ValueError):
    pass


class ContractError(LineLossError, ValueError):
    pass


class NumericError(LineLossError, FloatingPointError):
    pass


class ParseError(LineLossError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class RangeError(LineLossError, ValueError):
    pass


class VocabularyError(LineLossError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class AlignmentError(LineLossError, ValueError):
    pass


class InsufficientDataError(LineLossError, ValueError):
    pass


class DegenerateSplitError(LineLossError, ValueError):
    pass


class DivergenceError(LineLossError, RuntimeError):
    pass


class SchemaError(LineLossError, ValueError):
    pass
