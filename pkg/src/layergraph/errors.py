"""Exception hierarchy.

Every error raised by the library derives from :class:`LayerGraphError`.
``exit_code`` is what the command line front end returns when the error
escapes a command: 2 for validation/parse problems, 3 for numeric failures.
"""


class LayerGraphError(Exception):
    exit_code = 2


class ShapeMismatch(LayerGraphError, ValueError):
    pass


class DtypeMismatch(LayerGraphError, TypeError):
    pass


class DomainError(LayerGraphError, ValueError):
    pass


class IndexOutOfRange(LayerGraphError, IndexError):
    pass


class InvalidRange(LayerGraphError, ValueError):
    pass


class MissingInput(LayerGraphError):
    def __init__(self, name, message=None):
        self.name = name
        super().__init__(message or f"input {name!r} has no value")


class UnknownActivation(LayerGraphError, ValueError):
    pass


class InvalidProbability(LayerGraphError, ValueError):
    pass


class ArityMismatch(LayerGraphError, TypeError):
    pass


class CycleDetected(LayerGraphError):
    def __init__(self, path):
        self.path = list(path)
        super().__init__("cycle detected: " + " -> ".join(str(p) for p in self.path))


class UndeclaredInput(LayerGraphError):
    def __init__(self, names, message=None):
        self.names = list(names)
        super().__init__(message or "trace reached undeclared source(s): " + ", ".join(self.names))


class UnreachableDeclaredInput(LayerGraphError):
    def __init__(self, names, message=None):
        self.names = list(names)
        super().__init__(message or "declared input(s) not on any path to an output: " + ", ".join(self.names))


class UnreachableDependency(UndeclaredInput):
    """A module body depends on a source that is not one of its declared inputs."""


class DisconnectedInput(UnreachableDeclaredInput):
    """A module input does not feed the module output."""


class FeedArityMismatch(LayerGraphError, TypeError):
    pass


class FeedShapeMismatch(ShapeMismatch):
    pass


class NonScalarLoss(LayerGraphError, ValueError):
    pass


class NotInGraph(LayerGraphError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "node not in graph"


class EmptyDataset(LayerGraphError, ValueError):
    pass


class NonFiniteLoss(LayerGraphError, ArithmeticError):
    exit_code = 3


class ParseError(LayerGraphError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


class UnknownKind(ParseError):
    pass


class DuplicateName(ParseError):
    pass
