"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: argument/config problems exit
with 2, data/parse/schema problems with 3, numerical fitting failures with 4.
"""


class OrevineError(Exception):
    """Base class for all package errors."""


class ArgumentError(OrevineError):
    """An argument violates a documented precondition."""


class StructuralError(OrevineError):
    """Inputs are structurally inconsistent (dims mismatch, invalid vine, ...)."""


class FittingError(OrevineError):
    """A numerical fit cannot be carried out (too little data, no support, ...)."""


class ParseError(OrevineError):
    """Malformed external data; message carries a line number where possible."""


class SchemaError(OrevineError):
    """A persisted document has an unknown or incompatible schema version."""
