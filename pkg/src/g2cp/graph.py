"""Shared knowledge graph: storage, schema, selectors, embeddings, versions.

The graph is the only piece of state agents share. Mutations go through
``g2cp.update``; this module provides the raw primitives plus the version
history that makes rollback and replay possible.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import IO, Any, Callable, Iterable, Mapping, Union

from .errors import (
    DanglingEdge,
    ParseError,
    SchemaViolation,
    UnknownContextSymbol,
    UnknownNodeId,
    UnknownVersion,
)

EMBED_DIM = 64
LINK_THRESHOLD = 0.85
EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)

Scalar = Union[str, int, float, bool, datetime]


# ---------------------------------------------------------------- timestamps

def format_ts(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    if ts.microsecond:
        return ts.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_ts(text: str) -> datetime:
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


# ---------------------------------------------------------------- embeddings

def _normalize_text(text: str) -> str:
    text = text.lower().replace("_", " ").replace("-", " ")
    return " ".join(text.split())


def embed(text: str, dim: int = EMBED_DIM) -> tuple[float, ...]:
    """Hashed character-trigram bag, L2-normalized.

    Case, underscores and hyphens are folded so that ``pressure_drop`` and
    ``pressure drop`` embed identically.
    """
    if not text or not text.strip():
        raise ValueError("cannot embed empty text")
    padded = f" {_normalize_text(text)} "
    counts = [0.0] * dim
    for i in range(len(padded) - 2):
        digest = hashlib.blake2b(padded[i : i + 3].encode("utf-8"), digest_size=8).digest()
        counts[int.from_bytes(digest, "big") % dim] += 1.0
    norm = math.sqrt(sum(c * c for c in counts))
    return tuple(c / norm for c in counts)


def cosine(a: Iterable[float], b: Iterable[float]) -> float:
    a = tuple(a)
    b = tuple(b)
    num = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0 or nb == 0:
        return 0.0
    return num / (na * nb)


# ---------------------------------------------------------------- entities

@dataclass(frozen=True)
class ProvenanceTag:
    author: str
    timestamp: datetime
    source_message: str
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class Node:
    id: str
    type: str
    name: str
    attrs: Mapping[str, Scalar] = field(default_factory=dict)
    # derived from ``name``; excluded from structural equality
    embedding: tuple[float, ...] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if ":" not in self.id:
            raise ValueError(f"node id {self.id!r} must look like Type:name")
        for key in self.attrs:
            if not isinstance(key, str) or not key:
                raise ValueError(f"node {self.id}: attribute keys must be nonempty strings")

    @property
    def local_name(self) -> str:
        return self.id.split(":", 1)[1]


def edge_id_for(source: str, type_: str, target: str, ts: datetime) -> str:
    return f"{source}-[{type_}]->{target}@{format_ts(ts)}"


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    type: str
    weight: float = 1.0
    ts: datetime = EPOCH
    provenance: ProvenanceTag | None = None

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0 or math.isnan(self.weight):
            raise ValueError(f"edge weight {self.weight} outside [0, 1]")

    @property
    def id(self) -> str:
        return edge_id_for(self.source, self.type, self.target, self.ts)

    @property
    def triple(self) -> tuple[str, str, str]:
        return (self.source, self.type, self.target)


@dataclass
class GraphSchema:
    node_types: frozenset[str]
    edge_types: frozenset[str]
    # None means every (source type, edge type, target type) combination is allowed
    signatures: frozenset[tuple[str, str, str]] | None = None
    required_attrs: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def allows_edge(self, source_type: str, edge_type: str, target_type: str) -> bool:
        if edge_type not in self.edge_types:
            return False
        if source_type not in self.node_types or target_type not in self.node_types:
            return False
        if self.signatures is None:
            return True
        return (source_type, edge_type, target_type) in self.signatures

    def node_violations(self, node: Node) -> list[str]:
        out = []
        if node.type not in self.node_types:
            out.append(f"unknown node type {node.type!r} for {node.id}")
        if node.id.split(":", 1)[0] != node.type:
            out.append(f"node id {node.id} does not carry its type {node.type}")
        missing = set(self.required_attrs.get(node.type, ())) - set(node.attrs)
        if missing:
            out.append(f"node {node.id} missing required attributes {sorted(missing)}")
        return out

    @classmethod
    def open(cls, node_types: Iterable[str] = (), edge_types: Iterable[str] = ()) -> "GraphSchema":
        return cls(frozenset(node_types), frozenset(edge_types))


# ---------------------------------------------------------------- predicates

COMPARE_OPS = ("=", "!=", "<", ">", "<=", ">=")


@dataclass(frozen=True)
class Compare:
    attr: str
    op: str
    value: Scalar

    def evaluate(self, attrs: Mapping[str, Scalar]) -> bool:
        if self.attr not in attrs:
            return False
        left = attrs[self.attr]
        right = self.value
        comparable = _both_numeric(left, right) or type(left) is type(right)
        if self.op == "=":
            return comparable and left == right
        if self.op == "!=":
            return not (comparable and left == right)
        if not comparable or isinstance(left, bool):
            return False
        if self.op == "<":
            return left < right
        if self.op == ">":
            return left > right
        if self.op == "<=":
            return left <= right
        return left >= right


def _both_numeric(a, b) -> bool:
    return (
        isinstance(a, (int, float))
        and isinstance(b, (int, float))
        and not isinstance(a, bool)
        and not isinstance(b, bool)
    )


@dataclass(frozen=True)
class And:
    items: tuple

    def evaluate(self, attrs):
        return all(item.evaluate(attrs) for item in self.items)


@dataclass(frozen=True)
class Or:
    items: tuple

    def evaluate(self, attrs):
        return any(item.evaluate(attrs) for item in self.items)


Predicate = Union[Compare, And, Or]


# ---------------------------------------------------------------- selectors

@dataclass(frozen=True)
class ExplicitIds:
    ids: frozenset[str]

    def __post_init__(self):
        if not self.ids:
            raise ValueError("ExplicitIds selector needs at least one id")


@dataclass(frozen=True)
class ByType:
    types: frozenset[str]

    def __post_init__(self):
        if not self.types:
            raise ValueError("ByType selector needs at least one type")


@dataclass(frozen=True)
class PropertyFilter:
    node_type: str
    predicate: Predicate


@dataclass(frozen=True)
class ContextRef:
    symbol: str


@dataclass(frozen=True)
class ByName:
    names: tuple[str, ...]


NodeSelector = Union[ExplicitIds, ByType, PropertyFilter, ContextRef, ByName]
CONTEXT_SYMBOLS = ("CURRENT_FOCUS",)


# ---------------------------------------------------------------- deltas / history

@dataclass(frozen=True)
class GraphDelta:
    """Nodes and edges to add or remove. Applied as add_nodes, add_edges,
    del_edges, del_nodes."""

    add_nodes: tuple[Node, ...] = ()
    del_nodes: tuple[str, ...] = ()
    add_edges: tuple[Edge, ...] = ()
    del_edges: tuple[str, ...] = ()
    base_version: int | None = None

    def is_empty(self) -> bool:
        return not (self.add_nodes or self.del_nodes or self.add_edges or self.del_edges)

    def touched_node_types(self, graph: "KnowledgeGraph") -> set[str]:
        out = {n.type for n in self.add_nodes}
        for nid in self.del_nodes:
            out.add(nid.split(":", 1)[0])
        for e in self.add_edges:
            out.add(e.source.split(":", 1)[0])
            out.add(e.target.split(":", 1)[0])
        for eid in self.del_edges:
            edge = graph.edges.get(eid)
            if edge is not None:
                out.add(edge.source.split(":", 1)[0])
                out.add(edge.target.split(":", 1)[0])
        return out

    def touched_edge_types(self, graph: "KnowledgeGraph") -> set[str]:
        out = {e.type for e in self.add_edges}
        for eid in self.del_edges:
            edge = graph.edges.get(eid)
            if edge is not None:
                out.add(edge.type)
        return out


@dataclass(frozen=True)
class DeltaRecord:
    version: int
    delta: GraphDelta
    author: str
    timestamp: datetime
    kind: str = "update"  # or "rollback"
    source_message: str = ""


class KnowledgeGraph:
    """Heterogeneous directed graph with typed nodes and edges.

    ``version`` counts committed deltas. The state at version 0 is whatever
    the graph was constructed with; every later state is that base plus a
    prefix of ``history``.
    """

    def __init__(self, schema: GraphSchema, embedder: Callable[[str], tuple[float, ...]] = embed):
        self.schema = schema
        self.embedder = embedder
        self.nodes: dict[str, Node] = {}
        self.edges: dict[str, Edge] = {}
        self._out: dict[str, list[str]] = {}
        self._in: dict[str, set[str]] = {}
        self._embeddings: dict[str, tuple[float, ...]] = {}
        self.version = 0
        self.history: list[DeltaRecord] = []
        self.retired_ids: set[str] = set()
        self._base_nodes: dict[str, Node] = {}
        self._base_edges: dict[str, Edge] = {}

    # -- construction

    @classmethod
    def from_entities(cls, schema: GraphSchema, nodes: Iterable[Node] = (), edges: Iterable[Edge] = (),
                      embedder=embed) -> "KnowledgeGraph":
        g = cls(schema, embedder)
        for n in nodes:
            g._insert_node(n)
        for e in edges:
            if e.source not in g.nodes or e.target not in g.nodes:
                raise DanglingEdge(e.id)
            g._insert_edge(e)
        g._reset_base()
        return g

    def _reset_base(self) -> None:
        self._base_nodes = dict(self.nodes)
        self._base_edges = dict(self.edges)
        self.version = 0
        self.history = []

    def _insert_node(self, node: Node) -> None:
        self.nodes[node.id] = node
        self._out.setdefault(node.id, [])
        self._in.setdefault(node.id, set())
        self.retired_ids.add(node.id)

    def _insert_edge(self, edge: Edge) -> None:
        eid = edge.id
        self.edges[eid] = edge
        self._out[edge.source].append(eid)
        self._in[edge.target].add(eid)
        self.retired_ids.add(eid)

    def _remove_edge(self, eid: str) -> None:
        edge = self.edges.pop(eid)
        self._out[edge.source].remove(eid)
        self._in[edge.target].discard(eid)

    def _remove_node(self, nid: str) -> None:
        del self.nodes[nid]
        del self._out[nid]
        del self._in[nid]
        self._embeddings.pop(nid, None)

    def _raw_apply(self, delta: GraphDelta) -> None:
        for n in delta.add_nodes:
            self._insert_node(n)
        for e in delta.add_edges:
            self._insert_edge(e)
        for eid in delta.del_edges:
            self._remove_edge(eid)
        for nid in delta.del_nodes:
            self._remove_node(nid)

    def commit(self, delta: GraphDelta, author: str, timestamp: datetime,
               kind: str = "update", source_message: str = "") -> int:
        """Apply ``delta`` unchecked and append it to the history."""
        self._raw_apply(delta)
        self.version += 1
        self.history.append(DeltaRecord(self.version, delta, author, timestamp, kind, source_message))
        return self.version

    # -- queries

    def out_edges(self, node_id: str) -> list[Edge]:
        return [self.edges[eid] for eid in self._out.get(node_id, ())]

    def in_edge_ids(self, node_id: str) -> set[str]:
        return set(self._in.get(node_id, ()))

    def out_edge_ids(self, node_id: str) -> list[str]:
        return list(self._out.get(node_id, ()))

    def node_embedding(self, node_id: str) -> tuple[float, ...]:
        node = self.nodes[node_id]
        if node.embedding is not None:
            return node.embedding
        if node_id not in self._embeddings:
            self._embeddings[node_id] = self.embedder(node.name or node.local_name)
        return self._embeddings[node_id]

    def has_edge_triple(self, source: str, type_: str, target: str) -> bool:
        return any(self.edges[eid].type == type_ and self.edges[eid].target == target
                   for eid in self._out.get(source, ()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self.nodes == other.nodes and self.edges == other.edges

    __hash__ = None  # mutable

    def __repr__(self) -> str:
        return f"KnowledgeGraph(v{self.version}, {len(self.nodes)} nodes, {len(self.edges)} edges)"

    def digest(self) -> str:
        """Content hash of the current node/edge sets (history excluded)."""
        h = hashlib.sha256()
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            h.update(json.dumps([n.id, n.type, n.name, _attrs_json(n.attrs)], sort_keys=True).encode())
        for eid in sorted(self.edges):
            e = self.edges[eid]
            prov = None
            if e.provenance is not None:
                p = e.provenance
                prov = [p.author, format_ts(p.timestamp), p.source_message, repr(p.confidence)]
            h.update(json.dumps([eid, repr(e.weight), prov]).encode())
        return h.hexdigest()

    # -- versions

    def snapshot(self) -> int:
        return self.version

    def copy(self) -> "KnowledgeGraph":
        g = KnowledgeGraph(self.schema, self.embedder)
        g.nodes = dict(self.nodes)
        g.edges = dict(self.edges)
        g._out = {k: list(v) for k, v in self._out.items()}
        g._in = {k: set(v) for k, v in self._in.items()}
        g._embeddings = self._embeddings  # shared cache, values depend only on names
        g.version = self.version
        g.history = list(self.history)
        g.retired_ids = set(self.retired_ids)
        g._base_nodes = self._base_nodes
        g._base_edges = self._base_edges
        return g

    def base(self) -> "KnowledgeGraph":
        """Fresh graph holding the version-0 state."""
        g = KnowledgeGraph.from_entities(self.schema, self._base_nodes.values(), (), self.embedder)
        for e in sorted(self._base_edges.values(), key=lambda e: e.id):
            g._insert_edge(e)
        g._base_nodes = self._base_nodes
        g._base_edges = self._base_edges
        g._embeddings = self._embeddings
        return g

    def state_at(self, version: int) -> "KnowledgeGraph":
        """Reconstruct the graph at ``version`` by replaying deltas over the base."""
        if not 0 <= version <= self.version:
            raise UnknownVersion(f"version {version} not in history 0..{self.version}")
        g = self.base()
        for rec in self.history[:version]:
            g.commit(rec.delta, rec.author, rec.timestamp, rec.kind, rec.source_message)
        return g

    def rollback(self, version: int, author: str = "rollback",
                 timestamp: datetime | None = None) -> "KnowledgeGraph":
        """Restore the state at ``version`` by committing the inverse diff.

        History is never rewritten; the rollback is itself a new record.
        """
        target = self.state_at(version)
        delta = diff_states(self, target)
        self.commit(delta, author, timestamp or datetime.now(timezone.utc), kind="rollback")
        return self

    def permuted(self, seed: int) -> "KnowledgeGraph":
        """Copy with adjacency lists shuffled; for order-independence checks."""
        rng = random.Random(seed)
        g = self.copy()
        for lst in g._out.values():
            rng.shuffle(lst)
        keys = list(g.nodes)
        rng.shuffle(keys)
        g.nodes = {k: g.nodes[k] for k in keys}
        return g


def diff_states(current: KnowledgeGraph, target: KnowledgeGraph) -> GraphDelta:
    """Delta that turns ``current`` into ``target``."""
    add_nodes = tuple(target.nodes[n] for n in sorted(target.nodes.keys() - current.nodes.keys()))
    del_nodes = tuple(sorted(current.nodes.keys() - target.nodes.keys()))
    add_edges = tuple(target.edges[e] for e in sorted(target.edges.keys() - current.edges.keys()))
    del_edges = tuple(sorted(current.edges.keys() - target.edges.keys()))
    return GraphDelta(add_nodes, del_nodes, add_edges, del_edges)


def _attrs_json(attrs: Mapping[str, Scalar]) -> dict[str, Any]:
    out = {}
    for k, v in attrs.items():
        if isinstance(v, datetime):
            out[k] = {"ts": format_ts(v)}
        else:
            out[k] = v
    return out


def _attrs_from_json(raw: Mapping[str, Any]) -> dict[str, Scalar]:
    out = {}
    for k, v in raw.items():
        if isinstance(v, dict) and set(v) == {"ts"}:
            out[k] = parse_ts(v["ts"])
        elif isinstance(v, (str, int, float, bool)):
            out[k] = v
        else:
            raise ValueError(f"attribute {k!r} must be a scalar")
    return out


# ---------------------------------------------------------------- selectors

def resolve_selector(selector: NodeSelector, graph: KnowledgeGraph, context=None,
                     threshold: float = LINK_THRESHOLD) -> frozenset[str]:
    """Resolve a selector to the node ids it denotes.

    ``ByName`` links each name to its most similar node (ties broken by id)
    and keeps it when the cosine similarity is at least ``threshold``.
    """
    if isinstance(selector, ExplicitIds):
        missing = sorted(i for i in selector.ids if i not in graph.nodes)
        if missing:
            raise UnknownNodeId(f"unknown node ids: {missing}")
        return frozenset(selector.ids)
    if isinstance(selector, ByType):
        return frozenset(n.id for n in graph.nodes.values() if n.type in selector.types)
    if isinstance(selector, PropertyFilter):
        return frozenset(
            n.id for n in graph.nodes.values()
            if n.type == selector.node_type and selector.predicate.evaluate(n.attrs)
        )
    if isinstance(selector, ContextRef):
        if context is None or selector.symbol not in CONTEXT_SYMBOLS:
            raise UnknownContextSymbol(selector.symbol)
        return frozenset(i for i in context.focus if i in graph.nodes)
    if isinstance(selector, ByName):
        return frozenset(
            nid for name in selector.names
            for nid, score in [link_name(name, graph)]
            if nid is not None and score >= threshold
        )
    raise TypeError(f"not a selector: {selector!r}")


def link_name(name: str, graph: KnowledgeGraph) -> tuple[str | None, float]:
    """Best-matching node for a free-text mention and its similarity."""
    query = graph.embedder(name)
    best, best_score = None, -1.0
    for nid in sorted(graph.nodes):
        score = cosine(query, graph.node_embedding(nid))
        if score > best_score + 1e-12:
            best, best_score = nid, score
    return best, best_score


# ---------------------------------------------------------------- loading

def load_graph(stream: IO[str], embedder=embed) -> KnowledgeGraph:
    """Read the line-delimited graph format.

    An optional leading ``schema`` record fixes the type universes and allowed
    edge signatures; without one the schema is inferred from the records.
    """
    schema_rec = None
    nodes: dict[str, Node] = {}
    edges: list[tuple[int, Edge]] = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(lineno, f"invalid JSON: {exc.msg}", exc.colno) from None
        if not isinstance(rec, dict) or "kind" not in rec:
            raise ParseError(lineno, "record must be an object with a 'kind' field")
        kind = rec["kind"]
        try:
            if kind == "schema":
                if nodes or edges or schema_rec is not None:
                    raise ParseError(lineno, "schema record must come first")
                schema_rec = rec
            elif kind == "node":
                if edges:
                    raise ParseError(lineno, "node records must precede edge records")
                node = Node(rec["id"], rec["type"], rec.get("name") or rec["id"].split(":", 1)[1],
                            _attrs_from_json(rec.get("attrs", {})))
                if node.id in nodes:
                    raise SchemaViolation(node.id, "duplicate node id")
                nodes[node.id] = node
            elif kind == "edge":
                ts = parse_ts(rec["ts"]) if rec.get("ts") else EPOCH
                edge = Edge(rec["from"], rec["to"], rec["type"], float(rec.get("weight", 1.0)), ts)
                if edge.source not in nodes or edge.target not in nodes:
                    raise DanglingEdge(edge.id)
                edges.append((lineno, edge))
            else:
                raise ParseError(lineno, f"unknown record kind {kind!r}", expected=("schema", "node", "edge"))
        except KeyError as exc:
            raise ParseError(lineno, f"missing field {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None

    if schema_rec is not None:
        sigs = schema_rec.get("signatures")
        schema = GraphSchema(
            frozenset(schema_rec.get("node_types", ())),
            frozenset(schema_rec.get("edge_types", ())),
            None if sigs is None else frozenset(tuple(s) for s in sigs),
            {k: frozenset(v) for k, v in schema_rec.get("required", {}).items()},
        )
    else:
        schema = GraphSchema(
            frozenset(n.type for n in nodes.values()),
            frozenset(e.type for _, e in edges),
        )

    for node in nodes.values():
        problems = schema.node_violations(node)
        if problems:
            raise SchemaViolation(node.id, problems[0])
    seen: set[str] = set()
    for _, edge in edges:
        st, tt = nodes[edge.source].type, nodes[edge.target].type
        if not schema.allows_edge(st, edge.type, tt):
            raise SchemaViolation(edge.id, f"signature ({st}, {edge.type}, {tt}) not allowed")
        if edge.id in seen:
            raise SchemaViolation(edge.id, "duplicate edge (same endpoints, type and timestamp)")
        seen.add(edge.id)
    return KnowledgeGraph.from_entities(schema, nodes.values(), (e for _, e in edges), embedder)


def load_graph_file(path, embedder=embed) -> KnowledgeGraph:
    with open(path, encoding="utf-8") as fh:
        return load_graph(fh, embedder)


def dump_graph(graph: KnowledgeGraph, stream: IO[str]) -> None:
    s = graph.schema
    rec = {"kind": "schema", "node_types": sorted(s.node_types), "edge_types": sorted(s.edge_types)}
    if s.signatures is not None:
        rec["signatures"] = sorted(list(sig) for sig in s.signatures)
    if s.required_attrs:
        rec["required"] = {k: sorted(v) for k, v in s.required_attrs.items()}
    stream.write(json.dumps(rec) + "\n")
    for nid in sorted(graph.nodes):
        n = graph.nodes[nid]
        stream.write(json.dumps({"kind": "node", "id": n.id, "type": n.type, "name": n.name,
                                 "attrs": _attrs_json(n.attrs)}) + "\n")
    for eid in sorted(graph.edges):
        e = graph.edges[eid]
        stream.write(json.dumps({"kind": "edge", "from": e.source, "to": e.target, "type": e.type,
                                 "weight": e.weight, "ts": format_ts(e.ts)}) + "\n")
