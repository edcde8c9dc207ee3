import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from g2cp.errors import SourceEmpty
from g2cp.graph import Compare, Edge, ExplicitIds, GraphSchema, KnowledgeGraph, Node
from g2cp.protocol import ReturnFormat, Traverse
from g2cp.traversal import NO_LIMITS, ExecutionLimits, execute, traverse

from oracles import oracle_reach, oracle_scores, oracle_subgraph_edges, random_graph, random_sources, random_via


def chain(n, weights=None):
    schema = GraphSchema.open({"N"}, {"t", "u"})
    nodes = [Node(f"N:{i}", "N", str(i), {"i": i}) for i in range(n)]
    weights = weights or [1.0] * (n - 1)
    edges = [Edge(f"N:{i}", f"N:{i + 1}", "t", weights[i]) for i in range(n - 1)]
    return KnowledgeGraph.from_entities(schema, nodes, edges)


def test_depth_zero_returns_sources():
    g = chain(4)
    r = traverse(["N:1"], {"t"}, 0, ReturnFormat.SUBGRAPH, g)
    assert r.nodes == {"N:1": 0} and r.edges == frozenset()


def test_chain_depths_and_confidence():
    g = chain(4, [0.5, 0.5, 0.5])
    r = traverse(["N:0"], {"t"}, 2, ReturnFormat.SUBGRAPH, g)
    assert r.nodes == {"N:0": 0, "N:1": 1, "N:2": 2}
    assert r.confidence["N:2"] == pytest.approx(0.25)
    assert r.ranked() == [("N:1", 0.5), ("N:2", 0.25)]


def test_via_filter_excludes_other_types():
    g = chain(3)
    assert traverse(["N:0"], {"u"}, 3, ReturnFormat.SUBGRAPH, g).nodes == {"N:0": 0}


def test_unknown_source_raises():
    with pytest.raises(SourceEmpty):
        traverse(["N:9"], {"t"}, 1, ReturnFormat.SUBGRAPH, chain(2))
    with pytest.raises(SourceEmpty):
        traverse([], {"t"}, 1, ReturnFormat.SUBGRAPH, chain(2))


def test_leaves_and_paths():
    g = chain(4)
    leaves = traverse(["N:0"], {"t"}, 2, ReturnFormat.LEAVES, g)
    assert set(leaves.nodes) == {"N:2"}
    paths = traverse(["N:0"], {"t"}, 5, ReturnFormat.PATHS, g)
    assert len(paths.paths) == 1 and paths.paths[0].node_ids() == ["N:0", "N:1", "N:2", "N:3"]


def test_unbounded_is_capped_and_flagged():
    g = chain(10)
    limits = ExecutionLimits(max_effective_depth=3)
    r = traverse(["N:0"], {"t"}, None, ReturnFormat.SUBGRAPH, g, limits)
    assert max(r.nodes.values()) == 3 and r.truncated
    r = traverse(["N:6"], {"t"}, None, ReturnFormat.SUBGRAPH, g, limits)
    assert not r.truncated


def test_frontier_cap_truncates_lexicographically():
    schema = GraphSchema.open({"N"}, {"t"})
    nodes = [Node("N:root", "N", "root")] + [Node(f"N:c{i}", "N", f"c{i}") for i in range(5)]
    edges = [Edge("N:root", f"N:c{i}", "t") for i in (3, 1, 4, 0, 2)]
    g = KnowledgeGraph.from_entities(schema, nodes, edges)
    r = traverse(["N:root"], {"t"}, 1, ReturnFormat.SUBGRAPH, g, ExecutionLimits(frontier_cap=2))
    assert set(r.nodes) == {"N:root", "N:c0", "N:c1"} and r.truncated
    r = traverse(["N:root"], {"t"}, 1, ReturnFormat.SUBGRAPH, g, ExecutionLimits(max_result_nodes=4))
    assert set(r.nodes) == {"N:root", "N:c0", "N:c1", "N:c2"} and r.truncated


def test_constraints_filter_non_sources():
    g = chain(5)
    r = traverse(["N:0"], {"t"}, 4, ReturnFormat.SUBGRAPH, g, constraints=Compare("i", "<", 3))
    assert set(r.nodes) == {"N:0", "N:1", "N:2"}
    r = traverse(["N:4"], {"t"}, 1, ReturnFormat.SUBGRAPH, g, constraints=Compare("i", "<", 3))
    assert set(r.nodes) == {"N:4"}


def test_execute_resolves_selector():
    op = Traverse(ExplicitIds(frozenset({"N:0"})), frozenset({"t"}), 1)
    assert set(execute(op, chain(3)).nodes) == {"N:0", "N:1"}


def test_convergence_counts_sources():
    schema = GraphSchema.open({"N"}, {"t"})
    nodes = [Node(f"N:{x}", "N", x) for x in "abcz"]
    edges = [Edge("N:a", "N:z", "t", 0.3), Edge("N:b", "N:z", "t", 0.6), Edge("N:c", "N:a", "t", 0.5)]
    g = KnowledgeGraph.from_entities(schema, nodes, edges)
    r = traverse(["N:a", "N:b", "N:c"], {"t"}, 2, ReturnFormat.SUBGRAPH, g)
    assert r.convergence["N:z"] == 3
    assert r.confidence["N:z"] == pytest.approx(0.6)
    assert r.ranked()[0] == ("N:z", pytest.approx(0.6))


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**9), st.integers(0, 4))
def test_matches_oracle(seed, h):
    rng = random.Random(seed)
    g = random_graph(rng, 25)
    src, via = random_sources(rng, g), random_via(rng)
    edges = list(g.edges.values())
    r = traverse(src, via, h, ReturnFormat.SUBGRAPH, g, NO_LIMITS)
    dist = oracle_reach(edges, src, via, h)
    assert r.nodes == dist
    assert r.edges == oracle_subgraph_edges(edges, set(dist), via)
    best, conv = oracle_scores(edges, sorted(set(src)), via, set(dist), h)
    assert r.convergence == conv
    assert r.confidence.keys() == best.keys()
    for v in best:
        assert r.confidence[v] == pytest.approx(best[v], rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**9), st.integers(1, 3))
def test_matches_oracle_with_constraints(seed, h):
    rng = random.Random(seed)
    g = random_graph(rng, 25)
    src, via = random_sources(rng, g), random_via(rng)
    pred = Compare("k", "<=", rng.randrange(5))
    r = traverse(src, via, h, ReturnFormat.SUBGRAPH, g, NO_LIMITS, pred)
    dist = oracle_reach(list(g.edges.values()), src, via, h, lambda v: pred.evaluate(g.nodes[v].attrs))
    assert r.nodes == dist


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**9), st.sampled_from(list(ReturnFormat)), st.integers(1, 6))
def test_adjacency_order_does_not_matter(seed, fmt, cap):
    rng = random.Random(seed)
    g = random_graph(rng, 40)
    src, via, h = random_sources(rng, g), random_via(rng), rng.randint(0, 4)
    limits = ExecutionLimits(frontier_cap=cap, max_result_nodes=cap * 3)
    first = traverse(src, via, h, fmt, g, limits).canonical()
    assert traverse(src, via, h, fmt, g, limits).canonical() == first
    assert traverse(list(reversed(src)), via, h, fmt, g.permuted(seed), limits).canonical() == first


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**9))
def test_paths_are_shortest_and_valid(seed):
    rng = random.Random(seed)
    g = random_graph(rng, 20)
    src, via, h = random_sources(rng, g), random_via(rng), rng.randint(1, 3)
    r = traverse(src, via, h, ReturnFormat.PATHS, g, NO_LIMITS)
    edges = list(g.edges.values())
    for p in r.paths:
        assert p.start in src
        for e in p.edges:
            assert e.edge_id in g.edges and e.type in via
        assert len(p.edges) == oracle_reach(edges, [p.start], via, h)[p.end]
