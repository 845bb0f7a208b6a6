"""Shared exception types."""


class ContractError(ValueError):
    """An operation was called with inputs violating its documented contract."""


class FormatError(ValueError):
    """A binary file is malformed (bad magic, version, size, or field value).

    Messages name the offending file and byte offset where possible.
    """


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
