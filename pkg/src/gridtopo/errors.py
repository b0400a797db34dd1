"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside an operation's domain (unknown node, bad shape, ...)."""


class InfeasibleError(DomainError):
    """No spanning tree satisfying the root-degree constraint exists."""


class SchemaError(ValueError):
    """A file or config does not match its documented schema.

    ``field`` names the offending entry so the CLI can report it.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class ReconstructionError(RuntimeError):
    """Missing-data learning could not explain some neighborhood of the observable tree.

    Carries the partially reconstructed edge set and the neighborhood that failed
    so callers can inspect or score the partial result.
    """

    def __init__(self, message, partial_edges=(), node=None, children=(), diagnostics=None):
        super().__init__(message)
        self.partial_edges = tuple(partial_edges)
        self.node = node
        self.children = tuple(children)
        self.diagnostics = diagnostics or {}
