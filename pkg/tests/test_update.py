import random
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from g2cp.errors import ConcurrentWriteConflict, UnknownVersion, ValidationFailed
from g2cp.graph import Edge, GraphDelta, GraphSchema, KnowledgeGraph, Node
from g2cp.update import apply_update, provenance_for, validate_delta

from oracles import SetState, random_delta, random_graph

NOW = datetime(2025, 1, 1, tzinfo=timezone.utc)


def prov(confidence=1.0):
    return provenance_for("A_I", "msg", confidence, NOW)


def base_graph():
    schema = GraphSchema(frozenset({"Fault", "Symptom"}), frozenset({"causes"}),
                         frozenset({("Fault", "causes", "Symptom")}), {"Fault": frozenset({"severity"})})
    return KnowledgeGraph.from_entities(schema, [Node("Fault:a", "Fault", "a", {"severity": 1}),
                                                 Node("Symptom:s", "Symptom", "s")])


def test_apply_adds_and_tags_provenance():
    g = base_graph()
    e = Edge("Fault:a", "Symptom:s", "causes", 0.8)
    version, _ = apply_update(g, GraphDelta(add_edges=(e,)), prov(0.6))
    assert version == 1 and g.version == 1
    stored = g.edges[e.id]
    assert stored.provenance.author == "A_I" and stored.provenance.confidence == 0.6


@pytest.mark.parametrize("delta, fragment", [
    (GraphDelta(add_nodes=(Node("Fault:b", "Fault", "b"),)), "missing required attributes"),
    (GraphDelta(add_nodes=(Node("Other:x", "Other", "x"),)), "unknown node type"),
    (GraphDelta(add_edges=(Edge("Symptom:s", "Fault:a", "causes"),)), "signature"),
    (GraphDelta(add_edges=(Edge("Fault:a", "Symptom:zz", "causes"),)), "missing node"),
    (GraphDelta(del_nodes=("Fault:zz",)), "unknown node"),
    (GraphDelta(add_nodes=(Node("Fault:a", "Fault", "a", {"severity": 1}),)), "already exists"),
])
def test_validation_rules(delta, fragment):
    g = base_graph()
    problems = validate_delta(delta, g.schema, g)
    assert any(fragment in p for p in problems), problems
    before = g.digest()
    with pytest.raises(ValidationFailed):
        apply_update(g, delta, prov())
    assert g.digest() == before and g.version == 0


def test_delete_node_with_edge_needs_edge_deletion():
    g = base_graph()
    e = Edge("Fault:a", "Symptom:s", "causes")
    apply_update(g, GraphDelta(add_edges=(e,)), prov())
    with pytest.raises(ValidationFailed):
        apply_update(g, GraphDelta(del_nodes=("Symptom:s",)), prov())
    apply_update(g, GraphDelta(del_nodes=("Symptom:s",), del_edges=(e.id,)), prov())
    assert "Symptom:s" not in g.nodes and not g.edges


def test_ids_are_never_reused():
    g = base_graph()
    e = Edge("Fault:a", "Symptom:s", "causes")
    apply_update(g, GraphDelta(add_edges=(e,)), prov())
    apply_update(g, GraphDelta(del_edges=(e.id,)), prov())
    with pytest.raises(ValidationFailed):
        apply_update(g, GraphDelta(add_edges=(e,)), prov())


def test_base_version_conflict():
    g = base_graph()
    with pytest.raises(ConcurrentWriteConflict):
        apply_update(g, GraphDelta(del_nodes=("Symptom:s",), base_version=3), prov())


def test_state_at_bounds():
    g = base_graph()
    with pytest.raises(UnknownVersion):
        g.state_at(1)


def test_rollback_is_recorded_not_rewritten():
    g = base_graph()
    e = Edge("Fault:a", "Symptom:s", "causes")
    apply_update(g, GraphDelta(add_edges=(e,)), prov())
    g.rollback(0, timestamp=NOW)
    assert g.version == 2 and not g.edges
    assert [r.kind for r in g.history] == ["update", "rollback"]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**9))
def test_delta_sequence_matches_set_fold(seed):
    rng = random.Random(seed)
    g = random_graph(rng, 15)
    state, counter = SetState(g), [0]
    for _ in range(rng.randint(1, 12)):
        delta, ok = random_delta(rng, state, counter)
        if ok:
            apply_update(g, delta, prov())
            state.fold(delta)
        else:
            with pytest.raises(ValidationFailed):
                apply_update(g, delta, prov())
        assert state.matches(g)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**9))
def test_rollback_equals_prefix_replay(seed):
    rng = random.Random(seed)
    g = random_graph(rng, 15)
    counter, state = [0], SetState(g)
    applied = []
    for _ in range(rng.randint(1, 10)):
        delta, ok = random_delta(rng, state, counter)
        if ok:
            apply_update(g, delta, prov())
            state.fold(delta)
            applied.append(delta)
    k = rng.randint(0, g.version)
    replayed = g.base()
    for d in applied[:k]:
        apply_update(replayed, d, prov())
    assert g.state_at(k) == replayed
    g.rollback(k, timestamp=NOW)
    assert g == replayed
