import io
import random
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from g2cp.errors import DanglingEdge, ParseError, SchemaViolation, UnknownContextSymbol, UnknownNodeId
from g2cp.graph import (
    EPOCH, And, ByName, ByType, Compare, ContextRef, Edge, ExplicitIds, GraphSchema, KnowledgeGraph, Node,
    Or, PropertyFilter, cosine, dump_graph, edge_id_for, embed, format_ts, load_graph, parse_ts,
    resolve_selector,
)
from g2cp.protocol import ConversationContext

from oracles import random_graph


def small_graph():
    schema = GraphSchema(frozenset({"Fault", "Symptom"}), frozenset({"causes"}))
    nodes = [Node("Fault:leak", "Fault", "seal leak", {"severity": 3}),
             Node("Symptom:pressure_drop", "Symptom", "pressure drop", {"severity": 1})]
    edges = [Edge("Fault:leak", "Symptom:pressure_drop", "causes", 0.9)]
    return KnowledgeGraph.from_entities(schema, nodes, edges)


def test_edge_id_format():
    e = Edge("Fault:leak", "Symptom:x", "causes")
    assert e.id == "Fault:leak-[causes]->Symptom:x@1970-01-01T00:00:00Z"
    assert edge_id_for("a:b", "t", "c:d", datetime(2024, 5, 1, 12, tzinfo=timezone.utc)) \
        == "a:b-[t]->c:d@2024-05-01T12:00:00Z"


def test_node_id_needs_type_prefix():
    with pytest.raises(ValueError):
        Node("leak", "Fault", "leak")


def test_edge_weight_range():
    with pytest.raises(ValueError):
        Edge("a:x", "a:y", "t", 1.5)
    with pytest.raises(ValueError):
        Edge("a:x", "a:y", "t", float("nan"))


def test_dangling_edge_rejected():
    schema = GraphSchema.open({"A"}, {"t"})
    with pytest.raises(DanglingEdge):
        KnowledgeGraph.from_entities(schema, [Node("A:x", "A", "x")], [Edge("A:x", "A:y", "t")])


@given(st.datetimes(min_value=datetime(1971, 1, 1), max_value=datetime(2100, 1, 1)))
def test_timestamp_round_trip(naive):
    ts = naive.replace(tzinfo=timezone.utc)
    assert parse_ts(format_ts(ts)) == ts


def test_embedding_folds_case_and_separators():
    assert embed("pressure_drop") == embed("Pressure Drop")
    assert cosine(embed("pressure drop"), embed("pressure drop")) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        embed("  ")


def test_compare_semantics():
    attrs = {"n": 3, "s": "x", "b": True}
    assert Compare("n", ">", 2).evaluate(attrs)
    assert Compare("n", "=", 3.0).evaluate(attrs)
    assert not Compare("s", "<", 5).evaluate(attrs)  # incomparable types
    assert Compare("s", "!=", 5).evaluate(attrs)
    assert not Compare("missing", "!=", 1).evaluate(attrs)
    assert not Compare("b", ">", 0).evaluate(attrs)
    assert Or((Compare("n", "<", 0), And((Compare("s", "=", "x"), Compare("b", "=", True))))).evaluate(attrs)


def test_selectors():
    g = small_graph()
    assert resolve_selector(ExplicitIds(frozenset({"Fault:leak"})), g) == {"Fault:leak"}
    with pytest.raises(UnknownNodeId):
        resolve_selector(ExplicitIds(frozenset({"Fault:none"})), g)
    assert resolve_selector(ByType(frozenset({"Symptom"})), g) == {"Symptom:pressure_drop"}
    assert resolve_selector(PropertyFilter("Fault", Compare("severity", ">=", 3)), g) == {"Fault:leak"}
    assert resolve_selector(ByName(("Pressure-Drop",)), g) == {"Symptom:pressure_drop"}
    assert resolve_selector(ByName(("turbine blade",)), g) == frozenset()
    ctx = ConversationContext("c", frozenset({"Fault:leak", "Fault:gone"}))
    assert resolve_selector(ContextRef("CURRENT_FOCUS"), g, ctx) == {"Fault:leak"}
    with pytest.raises(UnknownContextSymbol):
        resolve_selector(ContextRef("CURRENT_FOCUS"), g)


def test_load_dump_round_trip():
    g = small_graph()
    buf = io.StringIO()
    dump_graph(g, buf)
    again = load_graph(io.StringIO(buf.getvalue()))
    assert again == g
    assert again.digest() == g.digest()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_load_dump_round_trip_random(seed):
    g = random_graph(random.Random(seed), 30)
    buf = io.StringIO()
    dump_graph(g, buf)
    assert load_graph(io.StringIO(buf.getvalue())) == g


def test_load_without_schema_infers_types():
    text = ('{"kind":"node","id":"A:x","type":"A","name":"x"}\n'
            '{"kind":"node","id":"B:y","type":"B","name":"y","attrs":{"at":{"ts":"2024-01-01T00:00:00Z"}}}\n'
            '{"kind":"edge","from":"A:x","to":"B:y","type":"t","weight":0.5}\n')
    g = load_graph(io.StringIO(text))
    assert g.schema.node_types == {"A", "B"}
    assert g.nodes["B:y"].attrs["at"] == datetime(2024, 1, 1, tzinfo=timezone.utc)
    assert next(iter(g.edges.values())).ts == EPOCH


@pytest.mark.parametrize("text, error", [
    ("not json\n", ParseError),
    ('{"id":"A:x"}\n', ParseError),
    ('{"kind":"node","id":"A:x","type":"A"}\n{"kind":"node","id":"A:x","type":"A"}\n', SchemaViolation),
    ('{"kind":"node","id":"A:x","type":"A"}\n{"kind":"edge","from":"A:x","to":"A:z","type":"t"}\n', DanglingEdge),
    ('{"kind":"node","id":"A:x","type":"A"}\n{"kind":"schema","node_types":["A"],"edge_types":[]}\n', ParseError),
    ('{"kind":"schema","node_types":["A"],"edge_types":["t"],"signatures":[]}\n'
     '{"kind":"node","id":"A:x","type":"A"}\n{"kind":"edge","from":"A:x","to":"A:x","type":"t"}\n', SchemaViolation),
])
def test_load_errors(text, error):
    with pytest.raises(error):
        load_graph(io.StringIO(text))


def test_parse_error_carries_line_number():
    with pytest.raises(ParseError) as info:
        load_graph(io.StringIO('{"kind":"node","id":"A:x","type":"A"}\n{broken\n'))
    assert info.value.line == 2


def test_permuted_copy_has_same_content():
    g = random_graph(random.Random(3), 40)
    p = g.permuted(7)
    assert p == g
    assert p.digest() == g.digest()
