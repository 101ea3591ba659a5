"""Exception hierarchy shared by all sparsekit modules.

The CLI maps these onto exit codes: ``ParseError``/``FormatError``/``OSError``
exit 2, ``ValidationError`` and its subclasses exit 3, ``DivergenceError``
exits 4.
"""


class SparsekitError(Exception):
    """Base class for all library errors."""


class ParseError(SparsekitError):
    """Input text or bytes could not be decoded."""


class FormatError(ParseError):
    """Binary weight container is malformed (bad magic, truncation, ...)."""


class ValidationError(SparsekitError, ValueError):
    """Well-formed input that violates a structural or semantic rule."""


class ShapeError(ValidationError):
    pass


class ParameterError(ValidationError):
    pass


class ConfigurationError(ValidationError):
    pass


class DomainError(ValidationError):
    """Argument outside a function's mathematical domain (log of 0, 1/0)."""


class GraphError(ValidationError):
    """Graph validation failure; ``code`` names the failure class."""

    def __init__(self, code, message, node_id=None):
        self.code = code
        self.node_id = node_id
        where = f" at node {node_id!r}" if node_id is not None else ""
        super().__init__(f"{code}{where}: {message}")


class InvariantError(FormatError):
    """Deserialized tensor violates its type invariants."""


class DivergenceError(SparsekitError):
    """Training produced a non-finite loss."""
