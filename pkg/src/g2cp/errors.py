"""Exception types shared across the runtime."""

from __future__ import annotations


class G2CPError(Exception):
    """Base class for all runtime errors."""


class ParseError(G2CPError):
    def __init__(self, line: int, reason: str, column: int = 0, expected: tuple[str, ...] = ()):
        self.line = line
        self.column = column
        self.reason = reason
        self.expected = tuple(expected)
        msg = f"line {line}, col {column}: {reason}"
        if self.expected:
            msg += f" (expected one of: {', '.join(self.expected)})"
        super().__init__(msg)


class CompatibilityError(G2CPError):
    """Performative and payload variant do not fit together."""


class SchemaViolation(G2CPError):
    def __init__(self, entity: str, rule: str):
        self.entity = entity
        self.rule = rule
        super().__init__(f"{entity}: {rule}")


class DanglingEdge(G2CPError):
    def __init__(self, edge_id: str):
        self.edge_id = edge_id
        super().__init__(f"edge {edge_id} references a missing node")


class UnknownNodeId(G2CPError):
    pass


class UnknownContextSymbol(G2CPError):
    pass


class UnknownVersion(G2CPError):
    pass


class ValidationFailed(G2CPError):
    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ConcurrentWriteConflict(G2CPError):
    pass


class SourceEmpty(G2CPError):
    pass


class UnknownSender(G2CPError):
    pass


class WrongState(G2CPError):
    pass


class BrokenChain(G2CPError):
    pass


class CorruptEntry(G2CPError):
    pass


class StorageFailure(G2CPError):
    pass


class NoEntitiesLinked(G2CPError):
    pass


class ScenarioTimeout(G2CPError):
    pass


class EmptyGraph(G2CPError):
    pass
