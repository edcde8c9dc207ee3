"""Validated graph mutation. Every change to a live graph goes through
``apply_update``."""

from __future__ import annotations

from dataclasses import replace
from datetime import datetime, timezone

from .errors import ConcurrentWriteConflict, ValidationFailed
from .graph import GraphDelta, GraphSchema, KnowledgeGraph, ProvenanceTag

__all__ = ["GraphDelta", "ProvenanceTag", "validate_delta", "apply_update"]


def validate_delta(delta: GraphDelta, schema: GraphSchema, graph: KnowledgeGraph) -> list[str]:
    """List every rule ``delta`` breaks against ``graph``; empty means ok."""
    out: list[str] = []
    added = {}
    for n in delta.add_nodes:
        out += schema.node_violations(n)
        if n.id in added:
            out.append(f"node {n.id} added twice")
        elif n.id in graph.nodes:
            out.append(f"node {n.id} already exists")
        elif n.id in graph.retired_ids:
            out.append(f"node id {n.id} was used before and cannot be reused")
        added[n.id] = n
    deleted = set(delta.del_nodes)
    for nid in deleted & added.keys():
        out.append(f"node {nid} both added and deleted")
    for nid in delta.del_nodes:
        if nid not in graph.nodes and nid not in added:
            out.append(f"cannot delete unknown node {nid}")

    def type_of(nid: str) -> str | None:
        node = added.get(nid) or graph.nodes.get(nid)
        return node.type if node is not None else None

    new_edges: dict[str, object] = {}
    for e in delta.add_edges:
        eid = e.id
        if e.type not in schema.edge_types:
            out.append(f"unknown edge type {e.type!r}")
        st, tt = type_of(e.source), type_of(e.target)
        if st is None or tt is None:
            missing = e.source if st is None else e.target
            out.append(f"edge {eid} references missing node {missing}")
        elif e.type in schema.edge_types and not schema.allows_edge(st, e.type, tt):
            out.append(f"signature ({st}, {e.type}, {tt}) not allowed by schema")
        if eid in new_edges or eid in graph.edges:
            out.append(f"duplicate edge {eid}: same endpoints, type and timestamp")
        elif eid in graph.retired_ids:
            out.append(f"edge id {eid} was used before and cannot be reused")
        new_edges[eid] = e
    del_edges = set(delta.del_edges)
    for eid in del_edges & new_edges.keys():
        out.append(f"edge {eid} both added and deleted")
    for eid in delta.del_edges:
        if eid not in graph.edges and eid not in new_edges:
            out.append(f"cannot delete unknown edge {eid}")

    for nid in deleted:
        if nid not in graph.nodes and nid not in added:
            continue
        incident = graph.in_edge_ids(nid) | set(graph.out_edge_ids(nid)) if nid in graph.nodes else set()
        incident |= {eid for eid, e in new_edges.items() if nid in (e.source, e.target)}
        if incident - del_edges:
            out.append(f"deleting {nid}: dangling edge would result")
    return out


def apply_update(graph: KnowledgeGraph, delta: GraphDelta, provenance: ProvenanceTag,
                 kind: str = "update") -> tuple[int, KnowledgeGraph]:
    """Validate and commit ``delta`` in place, returning the new version.

    Added edges inherit ``provenance``; a confidence already attached to an
    edge by its sender is kept. Earlier states stay reachable via
    ``graph.state_at``.
    """
    if delta.base_version is not None and delta.base_version != graph.version:
        raise ConcurrentWriteConflict(
            f"delta based on version {delta.base_version}, head is {graph.version}")
    violations = validate_delta(delta, graph.schema, graph)
    if violations:
        raise ValidationFailed(violations)
    tagged = tuple(
        replace(e, provenance=replace(
            provenance, confidence=e.provenance.confidence if e.provenance else provenance.confidence))
        for e in delta.add_edges
    )
    delta = replace(delta, add_edges=tagged)
    version = graph.commit(delta, provenance.author, provenance.timestamp, kind, provenance.source_message)
    return version, graph


def provenance_for(author: str, source_message: str = "", confidence: float = 1.0,
                   timestamp: datetime | None = None) -> ProvenanceTag:
    return ProvenanceTag(author, timestamp or datetime.now(timezone.utc), source_message, confidence)
