"""Graph statistics and the empirical traversal-complexity harness."""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import EmptyGraph
from .graph import Edge, GraphSchema, KnowledgeGraph, Node
from .protocol import ReturnFormat
from .traversal import NO_LIMITS, traverse


@dataclass(frozen=True)
class GraphStats:
    node_count: int
    edge_count: int
    avg_degree: float  # mean out-degree, |E| / |V|
    total_degree: float  # mean in+out degree, 2|E| / |V|
    density: float  # |E| / (|V| (|V| - 1)), directed
    diameter: int  # largest finite eccentricity
    connected: bool  # every ordered pair reachable

    @property
    def diameter_label(self) -> str:
        return str(self.diameter) if self.connected else f"UNREACHED (max finite {self.diameter})"


def _eccentricity(adj: dict[str, set[str]], s: str) -> tuple[int, int]:
    """(largest finite distance from s, number of nodes reached)."""
    dist = {s: 0}
    queue = deque([s])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return max(dist.values()), len(dist)


def compute_stats(graph: KnowledgeGraph) -> GraphStats:
    """Counts, degree, density and diameter over the union of all edge types."""
    n, m = len(graph.nodes), len(graph.edges)
    if n == 0:
        raise EmptyGraph("statistics need at least one node")
    adj: dict[str, set[str]] = {v: set() for v in graph.nodes}
    for e in graph.edges.values():
        adj[e.source].add(e.target)
    diameter, connected = 0, True
    for v in sorted(adj):
        ecc, reached = _eccentricity(adj, v)
        diameter = max(diameter, ecc)
        connected = connected and reached == n
    density = m / (n * (n - 1)) if n > 1 else 0.0
    return GraphStats(n, m, m / n, 2 * m / n, density, diameter, connected)


# ---------------------------------------------------------------- benchmark

@dataclass(frozen=True)
class BenchRow:
    n: int
    r: int
    h: int
    via: int
    expanded_nodes: int
    bound: int
    elapsed_ms: float

    @property
    def within_bound(self) -> bool:
        return self.expanded_nodes <= self.bound

    COLUMNS = ("n", "r", "h", "via", "expanded_nodes", "bound", "elapsed_ms")

    def values(self) -> tuple:
        return (self.n, self.r, self.h, self.via, self.expanded_nodes, self.bound, round(self.elapsed_ms, 3))


def regular_graph(n: int, r: int, via: int = 1, seed: int = 0) -> KnowledgeGraph:
    """Directed graph where every node has exactly ``r`` out-edges of each of
    ``via`` edge types.

    Targets follow a heap layout, node i pointing at (i*R + k + 1) mod n for
    R = r*via, so from node 0 the first layers form a complete R-ary tree
    until they wrap around. ``seed`` permutes insertion order only; the edge
    set does not depend on it.
    """
    if n < 1 or r < 1 or via < 1:
        raise ValueError("n, r and via must be positive")
    types = [f"t{j}" for j in range(via)]
    schema = GraphSchema(frozenset({"N"}), frozenset(types))
    ids = [f"N:{i}" for i in range(n)]
    nodes = [Node(i, "N", i[2:]) for i in ids]
    big_r = r * via
    edges = []
    for i in range(n):
        for k in range(big_r):
            j = (i * big_r + k + 1) % n
            edges.append(Edge(ids[i], ids[j], types[k % via]))
    # heap layout can repeat a (source, type, target) triple on tiny graphs
    edges = list({e.id: e for e in edges}.values())
    random.Random(seed).shuffle(edges)
    return KnowledgeGraph.from_entities(schema, nodes, edges)


def random_graph(n: int, m: int, seed: int = 0, edge_types: tuple[str, ...] = ("rel",)) -> KnowledgeGraph:
    """Exactly ``m`` distinct directed edges over ``n`` nodes, no self-loops.
    The default size matches the plant graph's 1,247 nodes / 3,892 edges."""
    if m > n * (n - 1) * len(edge_types):
        raise ValueError("too many edges for a simple graph")
    rng = random.Random(seed)
    schema = GraphSchema(frozenset({"N"}), frozenset(edge_types))
    ids = [f"N:{i}" for i in range(n)]
    seen: dict[str, Edge] = {}
    while len(seen) < m:
        a, b = rng.randrange(n), rng.randrange(n)
        if a != b:
            e = Edge(ids[a], ids[b], rng.choice(edge_types))
            seen.setdefault(e.id, e)
    return KnowledgeGraph.from_entities(schema, [Node(i, "N", i[2:]) for i in ids], seen.values())


def complexity_bound(n_sources: int, r: int, via: int, h: int) -> int:
    return n_sources * (r * via) ** h


def bench_traversal(sizes: Iterable[int] = (1_000, 10_000, 100_000), degrees: Iterable[int] = (2, 4, 8),
                    depths: Iterable[int] = (1, 2, 3), via: int = 1, seed: int = 0) -> Iterator[BenchRow]:
    """Traverse from a single source on r-regular graphs with limits off and
    yield one row per (n, r, h)."""
    depths = tuple(depths)
    for r in degrees:
        for n in sizes:
            g = regular_graph(n, r, via, seed)
            types = frozenset(f"t{j}" for j in range(via))
            for h in depths:
                res = traverse(["N:0"], types, h, ReturnFormat.SUBGRAPH, g, NO_LIMITS)
                yield BenchRow(n, r, h, via, res.stats.expanded_nodes,
                               complexity_bound(1, r, via, h), res.stats.elapsed_ms)


def format_rows(rows: Iterable[BenchRow], style: str = "plain") -> str:
    """Tab-separated rows with a header, or an aligned table."""
    rows = list(rows)
    table = [BenchRow.COLUMNS] + [tuple(str(v) for v in r.values()) for r in rows]
    if style == "table":
        widths = [max(len(row[i]) for row in table) for i in range(len(BenchRow.COLUMNS))]
        return "".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) + "\n" for row in table)
    return "".join("\t".join(row) + "\n" for row in table)
