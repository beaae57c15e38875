"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data/schema
problems exit 2, everything else exits 3.
"""


class ContextcapError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(ContextcapError):
    """Tensor or feature shapes are inconsistent."""


class ContractError(ContextcapError):
    """An operation was called outside its stated preconditions."""


class VocabularyError(ContextcapError):
    """A token id falls outside the vocabulary."""


class ParseError(ContextcapError):
    """A line of an input file could not be parsed."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class SchemaError(ContextcapError):
    """A parsed record violates the file schema."""


class DataError(ContextcapError):
    """Record values are invalid (non-finite, out of range)."""


class TrainingError(ContextcapError):
    """Training hit an unrecoverable numeric state."""


class InputError(ContextcapError):
    """Top-level input (dataset, corpus) is unusable, e.g. empty."""
