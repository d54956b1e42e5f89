"""Exception hierarchy shared across the package."""


class IceBudgetError(Exception):
    """Base class for all package errors."""


class ValidationError(IceBudgetError):
    """Bad input data or configuration (CLI exit code 1)."""


class ParseError(ValidationError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class BackendError(IceBudgetError):
    """Answering-backend failure; may carry the partial transcript."""

    def __init__(self, message, transcript=None):
        super().__init__(message)
        self.transcript = transcript


class DecodeError(BackendError):
    """Generated completion matched no verbalizer; keeps the raw text."""

    def __init__(self, message, raw_completion=""):
        super().__init__(message)
        self.raw_completion = raw_completion
