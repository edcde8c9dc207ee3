"""Filtered breadth-first traversal with runtime limits.

A traversal expands the source set along outgoing edges whose type is in
``via`` for ``depth`` hops, then formats what it explored as a subgraph,
its leaves, or the shortest paths leading to them.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

from .errors import SourceEmpty
from .graph import KnowledgeGraph, Predicate, resolve_selector
from .protocol import EdgeRef, Path, Result, ReturnFormat, Traverse

MAX_PATHS = 64


@dataclass(frozen=True)
class ExecutionLimits:
    timeout_ms: int = 30000
    max_result_nodes: int = 5000
    frontier_cap: int = 1000
    max_effective_depth: int = 6

    def __post_init__(self):
        for name in ("timeout_ms", "max_result_nodes", "frontier_cap", "max_effective_depth"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


NO_LIMITS = ExecutionLimits(timeout_ms=10**12, max_result_nodes=10**12,
                            frontier_cap=10**12, max_effective_depth=64)


@dataclass(frozen=True)
class TraversalStats:
    expanded_nodes: int  # largest frontier seen at any hop
    elapsed_ms: float
    hops: int = 0


@dataclass(frozen=True)
class TraversalResult:
    format: ReturnFormat
    nodes: Mapping[str, int]  # node id -> discovery depth
    edges: frozenset[str]
    paths: tuple[Path, ...] = ()
    truncated: bool = False
    stats: TraversalStats = field(default=TraversalStats(0, 0.0), compare=False)
    sources: frozenset[str] = frozenset()
    depth: int = 0
    confidence: Mapping[str, float] = field(default_factory=dict)
    convergence: Mapping[str, int] = field(default_factory=dict)
    timed_out: bool = False

    def canonical(self) -> tuple:
        """Order-free view used for equality checks across runs."""
        return (
            self.format,
            tuple(sorted(self.nodes.items())),
            tuple(sorted(self.edges)),
            tuple(sorted(self.paths, key=_path_key)),
            self.truncated,
            tuple(sorted(self.confidence.items())),
            tuple(sorted(self.convergence.items())),
        )

    def ranked(self, node_types: Iterable[str] | None = None) -> list[tuple[str, float]]:
        """Non-source nodes ordered by how many sources reach them, then by
        confidence, then by id."""
        types = None if node_types is None else set(node_types)
        cands = [
            v for v in self.nodes
            if v not in self.sources and v in self.confidence
            and (types is None or v.split(":", 1)[0] in types)
        ]
        cands.sort(key=lambda v: (-self.convergence[v], -self.confidence[v], v))
        return [(v, self.confidence[v]) for v in cands]

    def to_result(self, graph: KnowledgeGraph, source_op: Traverse | None = None,
                  rank_types: Iterable[str] | None = None) -> Result:
        ranked = self.ranked(rank_types) if rank_types is not None else []
        return Result(
            format=self.format,
            nodes=frozenset(self.nodes),
            edges=frozenset(EdgeRef.of(graph.edges[eid]) for eid in self.edges),
            paths=tuple(sorted(self.paths, key=_path_key)),
            ranked=tuple(v for v, _ in ranked),
            confidence=tuple(c for _, c in ranked),
            truncated=self.truncated,
            source=source_op,
        )


def _path_key(p: Path) -> tuple:
    return (p.start, p.edges)


def neighborhood(frontier: Iterable[str], via: Iterable[str], graph: KnowledgeGraph) -> set[str]:
    via = set(via)
    out: set[str] = set()
    for v in frontier:
        for e in graph.out_edges(v):
            if e.type in via:
                out.add(e.target)
    return out


def _admit(graph: KnowledgeGraph, nid: str, constraints: Predicate | None) -> bool:
    return constraints is None or constraints.evaluate(graph.nodes[nid].attrs)


def traverse(source: Iterable[str], via: Iterable[str], depth: int | None, ret: ReturnFormat,
             graph: KnowledgeGraph, limits: ExecutionLimits = ExecutionLimits(),
             constraints: Predicate | None = None) -> TraversalResult:
    """Expand ``source`` along ``via``-typed out-edges for ``depth`` hops.

    ``depth=None`` means unbounded and is capped at ``limits.max_effective_depth``.
    Caps truncate in lexicographic id order so the outcome never depends on
    adjacency storage order. ``constraints`` filters every non-source node.
    """
    start = time.perf_counter()
    via = frozenset(via)
    sources = sorted(set(source))
    if not sources:
        raise SourceEmpty("traversal source resolved to no nodes")
    for s in sources:
        if s not in graph.nodes:
            raise SourceEmpty(f"source node {s} not in graph")

    h = limits.max_effective_depth if depth is None else depth
    truncated = False
    timed_out = False

    layer = sources
    if len(layer) > limits.frontier_cap:
        layer, truncated = layer[:limits.frontier_cap], True
    if len(layer) > limits.max_result_nodes:
        layer, truncated = layer[:limits.max_result_nodes], True
    depths: dict[str, int] = {v: 0 for v in layer}
    peak = len(layer)
    hops = 0
    for hop in range(1, h + 1):
        if not layer:
            break
        if (time.perf_counter() - start) * 1000 > limits.timeout_ms:
            truncated = timed_out = True
            break
        found = sorted(
            v for v in neighborhood(layer, via, graph)
            if v not in depths and _admit(graph, v, constraints)
        )
        if len(found) > limits.frontier_cap:
            found, truncated = found[:limits.frontier_cap], True
        room = limits.max_result_nodes - len(depths)
        if len(found) > room:
            found, truncated = found[:room], True
        for v in found:
            depths[v] = hop
        layer = found
        hops = hop
        peak = max(peak, len(layer))
    if depth is None and layer and not truncated:
        # unbounded request stopped by the depth cap while still growing
        if any(v not in depths and _admit(graph, v, constraints)
               for v in neighborhood(layer, via, graph)):
            truncated = True

    kept = frozenset(depths)
    sub_edges = frozenset(
        eid for v in depths for eid in graph.out_edge_ids(v)
        if graph.edges[eid].type in via and graph.edges[eid].target in kept
    )
    per_source = {s: _bfs(graph, s, via, kept, h) for s in depths if depths[s] == 0}
    conf, conv = _scores(graph, per_source, via, kept)

    nodes: dict[str, int] = depths
    edges = sub_edges
    paths: tuple[Path, ...] = ()
    if ret is ReturnFormat.LEAVES:
        nodes = {v: d for v, d in depths.items() if v in _leaves(graph, depths, via, kept, h)}
        edges = frozenset()
    elif ret is ReturnFormat.PATHS:
        plist, cut = _paths(graph, per_source, via, kept, h)
        truncated = truncated or cut
        paths = tuple(plist)
        on_path = {v for p in paths for v in p.node_ids()}
        nodes = {v: d for v, d in depths.items() if v in on_path}
        edges = frozenset(e.edge_id for p in paths for e in p.edges)

    elapsed = (time.perf_counter() - start) * 1000
    return TraversalResult(
        format=ret, nodes=dict(nodes), edges=edges, paths=paths, truncated=truncated,
        stats=TraversalStats(peak, elapsed, hops), sources=frozenset(per_source), depth=h,
        confidence={v: c for v, c in conf.items() if v in nodes},
        convergence={v: c for v, c in conv.items() if v in nodes},
        timed_out=timed_out,
    )


def execute(op: Traverse, graph: KnowledgeGraph, limits: ExecutionLimits = ExecutionLimits(),
            context=None) -> TraversalResult:
    """Resolve the operation's selector and run it."""
    src = resolve_selector(op.source, graph, context)
    if not src:
        raise SourceEmpty("traversal source resolved to no nodes")
    return traverse(src, op.via, op.depth, op.ret, graph, limits, op.constraints)


def _filtered_out(graph: KnowledgeGraph, v: str, via: frozenset[str], kept: frozenset[str]):
    for eid in sorted(graph.out_edge_ids(v)):
        e = graph.edges[eid]
        if e.type in via and e.target in kept:
            yield e


def _bfs(graph, s, via, kept, h) -> dict[str, int]:
    dist = {s: 0}
    q = deque([s])
    while q:
        u = q.popleft()
        if dist[u] == h:
            continue
        for e in _filtered_out(graph, u, via, kept):
            if e.target not in dist:
                dist[e.target] = dist[u] + 1
                q.append(e.target)
    return dist


def _scores(graph, per_source, via, kept):
    """Best edge-weight product over shortest paths, and number of sources
    reaching each node."""
    best: dict[str, float] = {}
    conv: dict[str, int] = {}
    for s, dist in per_source.items():
        prod = {s: 1.0}
        for u in sorted(dist, key=lambda x: (dist[x], x)):
            for e in _filtered_out(graph, u, via, kept):
                if dist.get(e.target) == dist[u] + 1:
                    cand = prod[u] * e.weight
                    if cand > prod.get(e.target, -1.0):
                        prod[e.target] = cand
        for v, p in prod.items():
            conv[v] = conv.get(v, 0) + 1
            if p > best.get(v, -1.0):
                best[v] = p
    return best, conv


def _leaves(graph, depths, via, kept, h) -> set[str]:
    out = {v for v, d in depths.items() if d == h}
    for v in depths:
        if not any(True for _ in _filtered_out(graph, v, via, kept)):
            out.add(v)
    return out


def _shortest(graph, s, target, dist, via, kept) -> Iterator[tuple[EdgeRef, ...]]:
    """All shortest filtered paths s -> target, in edge order."""
    preds: dict[str, list[EdgeRef]] = {}

    def back(v: str) -> Iterator[tuple[EdgeRef, ...]]:
        if v == s:
            yield ()
            return
        for ref in preds_of(v):
            for head in back(ref.source):
                yield head + (ref,)

    def preds_of(v: str) -> list[EdgeRef]:
        if v not in preds:
            refs = []
            for eid in graph.in_edge_ids(v):
                e = graph.edges[eid]
                if e.type in via and e.source in kept and dist.get(e.source) == dist[v] - 1:
                    refs.append(EdgeRef.of(e))
            preds[v] = sorted(refs)
        return preds[v]

    yield from back(target)


def _paths(graph, per_source, via, kept, h) -> tuple[list[Path], bool]:
    """Shortest paths from each source to the nodes that end its own
    expansion: nodes at distance ``h`` and dead ends."""
    out: list[Path] = []
    for s in sorted(per_source):
        dist = per_source[s]
        ends = sorted(
            v for v, d in dist.items()
            if d == h or not any(True for _ in _filtered_out(graph, v, via, kept))
        )
        for t in ends:
            for edges in _shortest(graph, s, t, dist, via, kept):
                if len(out) == MAX_PATHS:
                    return out, True
                out.append(Path(s, edges))
    return out, False
