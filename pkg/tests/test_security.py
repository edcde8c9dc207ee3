import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from g2cp.agents import DIAGNOSTIC, DISPATCHER, INGESTION, PROCEDURAL, SYNTHESIS, Bus, default_roles, fixture_dir
from g2cp.errors import ParseError, UnknownSender
from g2cp.graph import Edge, ExplicitIds, GraphDelta, load_graph_file
from g2cp.protocol import ConversationContext, Error, Message, Performative, ReturnFormat, Traverse, Update
from g2cp.security import (
    Action, AgentIdentity, HumanReview, Roster, SignedEnvelope, TrustState, authorize, grant, sign,
    update_trust, verify_signature,
)


def plant():
    return load_graph_file(fixture_dir() / "turbomatic_mini.jsonl")


def request(sender=DISPATCHER, receiver=DIAGNOSTIC):
    op = Traverse(ExplicitIds(frozenset({"Component:HC-3"})), frozenset({"has_symptom"}), 1, ReturnFormat.SUBGRAPH)
    return Message(sender, receiver, Performative.REQUEST, op, ConversationContext("conv_sec"))


def roster_for(*agents):
    ids = {a: AgentIdentity.derive(a, [grant(Action.TRAVERSE, {"Component"}, {"has_symptom"})]) for a in agents}
    return ids, Roster(ids.values())


def test_keys_are_deterministic_per_seed():
    a = AgentIdentity.derive("A_D")
    assert a.key_id == AgentIdentity.derive("A_D").key_id
    assert a.key_id != AgentIdentity.derive("A_D", seed=b"other").key_id
    assert a.key_id != AgentIdentity.derive("A_P").key_id


def test_sign_verify_and_text_round_trip():
    ids, roster = roster_for(DISPATCHER)
    env = sign(request(), ids[DISPATCHER], 1)
    assert verify_signature(env, roster)
    again = SignedEnvelope.from_text(env.text)
    assert again == env and verify_signature(again, roster)
    assert again.message() == request()


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_any_single_character_change_is_detected(data):
    ids, roster = roster_for(DISPATCHER)
    env = sign(request(), ids[DISPATCHER], 1)
    text = env.signed_text
    i = data.draw(st.integers(0, len(text) - 1))
    c = data.draw(st.characters(blacklist_characters=[text[i], "\n"], blacklist_categories=("Cs",)))
    tampered = text[:i] + c + text[i + 1:] + env.text[len(text):]
    try:
        forged = SignedEnvelope.from_text(tampered)
    except ParseError:
        return  # no longer an envelope at all, dropped as malformed
    try:
        assert not verify_signature(forged, roster)
    except UnknownSender:
        pass


def test_forged_sender_rejected():
    ids, roster = roster_for(DISPATCHER, PROCEDURAL)
    # A_P signs a body that claims to come from the Dispatcher
    env = sign(request(sender=DISPATCHER), ids[PROCEDURAL], 1)
    assert not verify_signature(env, roster)
    # also when the key id is swapped to the claimed sender's
    swapped = SignedEnvelope(env.body, env.nonce, env.signature, ids[DISPATCHER].key_id)
    assert not verify_signature(swapped, roster)


def test_unknown_sender():
    ids, roster = roster_for(DISPATCHER)
    env = sign(request(sender="Mallory"), AgentIdentity.derive("Mallory"), 1)
    with pytest.raises(UnknownSender):
        verify_signature(env, roster)


def test_authorize_traverse_scope():
    perms = [grant(Action.TRAVERSE, {"Component", "Symptom"}, {"has_symptom"})]
    assert authorize(perms, request().operation)
    wider = Traverse(ExplicitIds(frozenset({"Fault:x"})), frozenset({"has_symptom"}), 1)
    assert not authorize(perms, wider)
    assert not authorize([], request().operation).allowed


def test_default_grants():
    g = plant()
    roles = default_roles(g)
    delta = GraphDelta(add_edges=(Edge("Fault:seal_degradation", "Symptom:pressure_drop", "causes"),))
    assert not authorize(roles[DIAGNOSTIC].permissions, Update(delta), g)
    assert authorize(roles[INGESTION].permissions, Update(delta), g)
    # the synthesis grant covers proposal edges only
    assert not authorize(roles[SYNTHESIS].permissions, Update(delta), g)
    proposal = GraphDelta(add_edges=(Edge("Part:B-4521", "Sensor:TS-33", "correlates_with", 0.8),))
    assert authorize(roles[SYNTHESIS].permissions, Update(proposal), g)


def test_trust_recurrence_and_review():
    state = TrustState()
    assert state.score("A_D") == 1.0
    for k in range(1, 8):
        s = update_trust(state, "A_D", False)
        assert math.isclose(s, 0.9 ** k, rel_tol=0, abs_tol=1e-12)
        assert bool(state.events) == (s < 0.5)
    assert state.events == [HumanReview("A_D", state.score("A_D"))]
    s = update_trust(state, "A_D", True)
    assert math.isclose(s, 0.9 ** 8 + 0.1, abs_tol=1e-12)


def test_bus_drops_tampered_and_replayed_traffic():
    bus = Bus(plant())
    env = bus.sign(request())
    bus.post(env.text.replace("DEPTH: 1", "DEPTH: 2"), DIAGNOSTIC)
    bus.post(env.text, DIAGNOSTIC)
    bus.post(env.text, DIAGNOSTIC)  # replay of the same nonce
    bus.pump()
    kinds = [e.kind for e in bus.events]
    assert kinds == ["bad-signature", "replayed-nonce"]
    assert len([t for t in bus.transcript if t.message and t.message.sender == DISPATCHER]) == 1


def test_bus_rejects_diagnostic_update():
    g = plant()
    bus = Bus(g)
    before = g.digest()
    delta = GraphDelta(add_edges=(Edge("Fault:seal_degradation", "Symptom:pressure_drop", "causes"),))
    bus.send(Message(DIAGNOSTIC, INGESTION, Performative.UPDATE, Update(delta), ConversationContext("c9")))
    bus.pump()
    assert g.digest() == before and g.version == 0
    reply = bus.transcript[-1].message
    assert reply.performative is Performative.REJECT and reply.sender == INGESTION
    assert isinstance(reply.operation, Error) and reply.operation.code == "UNAUTHORIZED"
