"""Graph-grounded communication between maintenance agents.

Agents exchange executable graph operations over a shared, versioned
knowledge graph; every delivery is signed, authorized, executed
deterministically and appended to a replayable audit log.
"""

from .graph import Edge, GraphDelta, GraphSchema, KnowledgeGraph, Node, load_graph, load_graph_file
from .protocol import Message, Performative, ReturnFormat, Traverse, Update, parse, serialize, token_count
from .traversal import ExecutionLimits, execute, traverse

__all__ = [
    "Edge", "GraphDelta", "GraphSchema", "KnowledgeGraph", "Node", "load_graph", "load_graph_file",
    "Message", "Performative", "ReturnFormat", "Traverse", "Update", "parse", "serialize", "token_count",
    "ExecutionLimits", "execute", "traverse",
]
