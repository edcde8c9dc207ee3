"""Agent roles, query translation, the message bus and the scenario harness.

Natural language appears only at the user boundary: the language port turns
the user query into entities and an intent, and everything exchanged after
that is protocol text.
"""

from __future__ import annotations

import heapq
import json
import os
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Protocol

from .audit import (AuditLog, Claim, Fabricated, Grounded, Outcome, ProvenanceTrace, malformed_outcome, process,
                    verify_claim)
from .commitment import CommitmentLedger
from .errors import G2CPError, NoEntitiesLinked, ParseError, ScenarioTimeout, UnknownSender
from .graph import (EPOCH, ByName, Edge, ExplicitIds, GraphDelta, KnowledgeGraph, ProvenanceTag,
                    load_graph_file, resolve_selector)
from .protocol import (ConversationContext, EdgeRef, Error, Message, Performative, Result, ReturnFormat,
                       Traverse, Update, parse, serialize, token_count)
from .security import (Action, AgentIdentity, Permission, Roster, SignedEnvelope, TrustState, grant,
                       update_trust, verify_signature)
from .security import sign as sign_message
from .traversal import ExecutionLimits, TraversalResult, execute, neighborhood

DISPATCHER, DIAGNOSTIC, PROCEDURAL, SYNTHESIS, INGESTION = "Dispatcher", "A_D", "A_P", "A_S", "A_I"

EDGE_MAP: dict[str, frozenset[str]] = {
    "diagnostic": frozenset({"causes", "indicates"}),
    "procedural": frozenset({"addressed_by", "requires", "requires_part", "has_safety_protocol"}),
    "predictive": frozenset({"occurred_in", "failed_after"}),
    "factoid": frozenset({"has_spec", "has_sensor", "part_of"}),
}
DEPTH_RULE = {"factoid": 1, "diagnostic": 2, "procedural": 2, "predictive": 3}
INTENT_AGENT = {"diagnostic": DIAGNOSTIC, "procedural": PROCEDURAL,
                "predictive": SYNTHESIS, "factoid": PROCEDURAL}
SPECIALIZATION = {
    DIAGNOSTIC: frozenset({"causes", "indicates", "correlates_with"}),
    PROCEDURAL: frozenset({"addressed_by", "requires", "precedes", "requires_part", "has_safety_protocol"}),
    SYNTHESIS: frozenset({"occurred_in", "replaced_in", "failed_after"}),
}
PROPOSAL_EDGE_TYPES = ("risk_indicator", "correlates_with")


# ---------------------------------------------------------------- language port

class LanguagePort(Protocol):
    def extract_entities(self, text: str) -> list[str]: ...
    def classify_intent(self, text: str) -> str: ...
    def estimate_depth(self, text: str, n_entities: int, n_edge_types: int) -> int: ...
    def render(self, claim: Claim) -> str: ...


_INTENT_KEYWORDS = (
    ("predictive", ("predict", "next likely", "at risk", "forecast")),
    ("diagnostic", ("why", "cause", "causes", "diagnose", "wrong", "fault", "faults")),
    ("procedural", ("how do i", "procedure", "replace", "repair", "fix", "steps")),
)


def _has_word(text: str, phrase: str) -> bool:
    return re.search(r"(?<!\w)" + re.escape(phrase) + r"(?!\w)", text) is not None


class StubPort:
    """Deterministic stand-in for a language model.

    Entities are the longest non-overlapping whole-word matches of node
    display names in the query, case-insensitively. Trailing fragments of a
    display name that contain a digit ("HC-3", "circuit HC-3") also match
    when no other node shares them.
    """

    def __init__(self, graph: KnowledgeGraph):
        names: dict[str, str] = {}
        for nid in sorted(graph.nodes):
            name = graph.nodes[nid].name
            names.setdefault(name.lower(), name)
        aliases: dict[str, set[str]] = {}
        for name in set(names.values()):
            words = name.split()
            for i in range(1, len(words)):
                tail = " ".join(words[i:])
                if any(ch.isdigit() for ch in tail):
                    aliases.setdefault(tail.lower(), set()).add(name)
        self.phrases: dict[str, str] = dict(names)
        for alias, owners in aliases.items():
            if len(owners) == 1 and alias not in self.phrases:
                self.phrases[alias] = next(iter(owners))

    def extract_entities(self, text: str) -> list[str]:
        low = text.lower()
        spans = []
        for phrase, name in self.phrases.items():
            for m in re.finditer(r"(?<!\w)" + re.escape(phrase) + r"(?!\w)", low):
                spans.append((m.start(), m.end(), name))
        spans.sort(key=lambda s: (-(s[1] - s[0]), s[0], s[2]))
        taken: list[tuple[int, int, str]] = []
        for s in spans:
            if all(s[1] <= t[0] or s[0] >= t[1] for t in taken):
                taken.append(s)
        out: list[str] = []
        for _, _, name in sorted(taken):
            if name not in out:
                out.append(name)
        return out

    def classify_intent(self, text: str) -> str:
        low = text.lower()
        for intent, words in _INTENT_KEYWORDS:
            if any(_has_word(low, w) for w in words):
                return intent
        return "factoid"

    def estimate_depth(self, text: str, n_entities: int, n_edge_types: int) -> int:
        return DEPTH_RULE[self.classify_intent(text)]

    def render(self, claim: Claim) -> str:
        return "Findings: " + ", ".join(sorted(claim.nodes)) if claim.nodes else "No grounded findings."


# ---------------------------------------------------------------- operation selection

@dataclass(frozen=True)
class Selection:
    intent: str
    anchors: frozenset[str]
    operation: Traverse


def link_entities(names: Iterable[str], graph: KnowledgeGraph) -> frozenset[str]:
    names = tuple(names)
    if not names or not graph.nodes:
        return frozenset()
    return resolve_selector(ByName(names), graph)


def prune_via(sources: Iterable[str], candidates: Iterable[str], depth: int, graph: KnowledgeGraph) -> frozenset[str]:
    """Candidate edge types that actually occur within ``depth`` hops of the
    sources when expanding along the candidates."""
    cand = frozenset(candidates)
    used: set[str] = set()
    layer, seen = set(sources), set(sources)
    for _ in range(depth):
        for v in layer:
            used.update(e.type for e in graph.out_edges(v) if e.type in cand)
        layer = neighborhood(layer, cand, graph) - seen
        seen |= layer
    return frozenset(used)


def _types(ids: Iterable[str]) -> set[str]:
    return {i.split(":", 1)[0] for i in ids}


def select_operation(query: str, graph: KnowledgeGraph, port: LanguagePort) -> Selection:
    """Entities, linking, intent, edge types and depth, assembled into one traversal."""
    anchors = link_entities(port.extract_entities(query), graph)
    if not anchors:
        raise NoEntitiesLinked(f"no graph entities found in {query!r}")
    intent = port.classify_intent(query)
    candidates = EDGE_MAP[intent]
    depth = max(1, min(3, port.estimate_depth(query, len(anchors), len(candidates))))
    if intent == "factoid":
        depth = 1
    ret = ReturnFormat.SUBGRAPH
    if intent == "diagnostic" and "Symptom" not in _types(anchors):
        # no symptom named: start from the component's observed symptoms
        via, depth = frozenset({"has_symptom"}), 1
    else:
        via = prune_via(anchors, candidates, depth, graph) or candidates
        if intent == "diagnostic" and sum(1 for a in anchors if a.startswith("Symptom:")) >= 2:
            ret = ReturnFormat.PATHS
    return Selection(intent, anchors, Traverse(ExplicitIds(anchors), via, depth, ret))


def translate_query(query: str, graph: KnowledgeGraph, port: LanguagePort,
                    conversation_id: str = "conv_001") -> list[Message]:
    """The first protocol message for a user query. Later messages are
    produced by the agents as results arrive."""
    sel = select_operation(query, graph, port)
    return [Message(DISPATCHER, INTENT_AGENT[sel.intent], Performative.REQUEST, sel.operation,
                    ConversationContext(conversation_id))]


# ---------------------------------------------------------------- roles

@dataclass(frozen=True)
class AgentRole:
    agent_id: str
    role: str
    edge_specialization: frozenset[str]
    permissions: frozenset[Permission]


def default_roles(graph: KnowledgeGraph) -> dict[str, AgentRole]:
    """The five roles with the grants they need on ``graph``'s schema."""
    lam, psi = graph.schema.node_types, graph.schema.edge_types

    def g(action, nodes, edges):
        nodes, edges = set(nodes) & lam, set(edges) & psi
        return [grant(action, nodes, edges)] if nodes and edges else []

    diag = SPECIALIZATION[DIAGNOSTIC]
    proc = SPECIALIZATION[PROCEDURAL]
    synth = SPECIALIZATION[SYNTHESIS]
    return {
        DISPATCHER: AgentRole(DISPATCHER, "Dispatcher", psi, frozenset(g(Action.TRAVERSE, lam, psi))),
        DIAGNOSTIC: AgentRole(DIAGNOSTIC, "Diagnostic", diag, frozenset(
            g(Action.TRAVERSE, {"Symptom", "Fault"}, {"causes", "indicates"})
            + g(Action.TRAVERSE, {"Component", "Symptom", "Fault"},
                diag | {"has_symptom", "located_in", "leads_to"}))),
        PROCEDURAL: AgentRole(PROCEDURAL, "Procedural", proc | EDGE_MAP["procedural"], frozenset(
            g(Action.TRAVERSE, {"Fault", "Component", "Part", "Procedure"},
              proc | EDGE_MAP["procedural"] | EDGE_MAP["factoid"] | {"occurred_in"}))),
        SYNTHESIS: AgentRole(SYNTHESIS, "Synthesis", synth, frozenset(
            g(Action.TRAVERSE, {"Fault", "Component", "Part", "WorkOrder"}, synth)
            + g(Action.UPDATE, {"Part", "Fault", "Component", "Sensor", "Environment"},
                PROPOSAL_EDGE_TYPES))),
        INGESTION: AgentRole(INGESTION, "Ingestion", psi, frozenset(g(Action.UPDATE, lam, psi))),
    }


def default_roster(graph: KnowledgeGraph, key_seed: bytes = b"g2cp") -> Roster:
    """Public keys and grants of the default roles, as a replayer needs them."""
    return Roster(AgentIdentity.derive(a, r.permissions, key_seed) for a, r in default_roles(graph).items())


# ---------------------------------------------------------------- agents

@dataclass
class Delivery:
    """A message as handed to its receiver, with what executing it produced."""

    seq: int
    message: Message
    outcome: Outcome


class Agent:
    """Base agent: executes what it is sent and answers with the result."""

    def __init__(self, agent_id: str, graph: KnowledgeGraph):
        self.agent_id = agent_id
        self.graph = graph
        self.inbox: list[Delivery] = []

    def reply(self, to: Message, perf: Performative, payload, focus=frozenset()) -> Message:
        return Message(self.agent_id, to.sender, perf, payload,
                       ConversationContext(to.context.conversation_id, frozenset(focus)))

    def answer_traversal(self, d: Delivery, rank_types=None) -> list[Message]:
        m = d.message
        perf = Performative.CONFIRM if m.performative is Performative.QUERY else Performative.INFORM
        if isinstance(d.outcome.payload, Error):
            return [self.reply(m, perf, d.outcome.payload)]
        tr: TraversalResult = d.outcome.traversal
        return [self.reply(m, perf, tr.to_result(self.graph, m.operation, rank_types))]

    def handle(self, d: Delivery) -> list[Message]:
        self.inbox.append(d)
        m = d.message
        if m.performative in (Performative.REQUEST, Performative.QUERY) and isinstance(m.operation, Traverse):
            return self.answer_traversal(d)
        return []


class DiagnosticAgent(Agent):
    """Ranks faults. When the request starts from components rather than
    symptoms it extends the traversal through the causal edges itself."""

    def handle(self, d: Delivery) -> list[Message]:
        self.inbox.append(d)
        m = d.message
        if m.performative not in (Performative.REQUEST, Performative.QUERY) or not isinstance(m.operation, Traverse):
            return []
        if isinstance(d.outcome.payload, Error):
            return self.answer_traversal(d)
        tr: TraversalResult = d.outcome.traversal
        if "Symptom" in _types(tr.sources):
            return self.answer_traversal(d, rank_types={"Fault"})
        op = m.operation
        ext = Traverse(ExplicitIds(tr.sources), op.via | EDGE_MAP["diagnostic"],
                       (op.depth if op.depth is not None else 0) + 1, op.ret, op.constraints)
        ext_tr = execute(ext, self.graph)
        perf = Performative.CONFIRM if m.performative is Performative.QUERY else Performative.INFORM
        return [self.reply(m, perf, ext_tr.to_result(self.graph, ext, {"Fault"}))]


class ProceduralAgent(Agent):
    """Returns procedures; asks Synthesis for incident history when the
    fault has any."""

    def handle(self, d: Delivery) -> list[Message]:
        self.inbox.append(d)
        m = d.message
        if m.performative is not Performative.REQUEST or not isinstance(m.operation, Traverse):
            return []
        if isinstance(d.outcome.payload, Error):
            return self.answer_traversal(d)
        tr: TraversalResult = d.outcome.traversal
        faults = sorted(s for s in tr.sources if s.startswith("Fault:")
                        and any(e.type == "occurred_in" for e in self.graph.out_edges(s)))
        if faults:
            anchors = set(faults) | {f for f in m.context.focus if f.startswith("Component:")}
            query = Traverse(ExplicitIds(frozenset(anchors)), frozenset({"occurred_in"}), 2, ReturnFormat.LEAVES)
            return [Message(self.agent_id, SYNTHESIS, Performative.QUERY, query,
                            ConversationContext(m.context.conversation_id))]
        return self.answer_traversal(d)


class SynthesisAgent(Agent):
    def handle(self, d: Delivery) -> list[Message]:
        self.inbox.append(d)
        m = d.message
        if m.performative in (Performative.REQUEST, Performative.QUERY) and isinstance(m.operation, Traverse):
            rank = {"Fault"} if m.performative is Performative.REQUEST else None
            return self.answer_traversal(d, rank_types=rank)
        return []


class IngestionAgent(Agent):
    def handle(self, d: Delivery) -> list[Message]:
        self.inbox.append(d)
        m = d.message
        if m.performative is not Performative.UPDATE:
            return []
        if d.outcome.applied:
            delta = m.operation.delta
            refs = frozenset(EdgeRef.of(e) for e in delta.add_edges)
            nodes = {n.id for n in delta.add_nodes} | {r.source for r in refs} | {r.target for r in refs}
            return [self.reply(m, Performative.CONFIRM, Result(ReturnFormat.SUBGRAPH, frozenset(nodes), refs))]
        err = d.outcome.payload if isinstance(d.outcome.payload, Error) else Error("VALIDATION", "not applied")
        return [self.reply(m, Performative.REJECT, err)]


class Dispatcher(Agent):
    """Opens conversations and, after a diagnosis, asks for the repair
    procedure of the top-ranked fault."""

    def __init__(self, agent_id: str, graph: KnowledgeGraph):
        super().__init__(agent_id, graph)
        self.selection: Selection | None = None

    def handle(self, d: Delivery) -> list[Message]:
        self.inbox.append(d)
        m = d.message
        sel = self.selection
        if (sel is None or sel.intent != "diagnostic" or m.sender != DIAGNOSTIC
                or m.performative is not Performative.INFORM or not isinstance(m.operation, Result)
                or not m.operation.ranked or relational(sel)):
            return []
        top = m.operation.ranked[0]
        via = prune_via({top}, EDGE_MAP["procedural"], 1, self.graph)
        if not via:
            return []
        op = Traverse(ExplicitIds(frozenset({top})), via, 1, ReturnFormat.SUBGRAPH)
        focus = frozenset(a for a in sel.anchors if not a.startswith("Symptom:"))
        return [Message(self.agent_id, PROCEDURAL, Performative.REQUEST, op,
                        ConversationContext(m.context.conversation_id, focus))]


def relational(sel: Selection) -> bool:
    """Several non-symptom anchors in a diagnostic query: what they share."""
    return sel.intent == "diagnostic" and len(sel.anchors) >= 2 and "Symptom" not in _types(sel.anchors)


AGENT_CLASSES = {DISPATCHER: Dispatcher, DIAGNOSTIC: DiagnosticAgent, PROCEDURAL: ProceduralAgent,
                 SYNTHESIS: SynthesisAgent, INGESTION: IngestionAgent}


def handle_message(agent: Agent, message: Message, outcome: Outcome, seq: int = 0) -> list[Message]:
    """Hand a delivered, executed message to ``agent`` and collect its replies."""
    return agent.handle(Delivery(seq, message, outcome))


# ---------------------------------------------------------------- bus

PRIORITY = {Performative.REJECT: 0, Performative.CONFIRM: 1, Performative.INFORM: 1,
            Performative.REQUEST: 2, Performative.QUERY: 2, Performative.PROPOSE: 3,
            Performative.UPDATE: 4}
SCENARIO_EPOCH = datetime(2025, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class TranscriptItem:
    seq: int
    envelope: str
    message: Message | None

    @property
    def body(self) -> str:
        return serialize(self.message) if self.message is not None else ""


@dataclass(frozen=True)
class SecurityEvent:
    kind: str  # bad-signature | replayed-nonce | unknown-sender
    sender: str
    detail: str = ""


class Bus:
    """In-process transport. Queues are FIFO per receiver; the next message
    delivered is the highest-priority head, ties broken by send order.

    Delivery runs the full receive pipeline: signature and nonce check,
    parse, authorize and execute, audit append, commitment bookkeeping, and
    only then the receiving agent's own logic.
    """

    def __init__(self, graph: KnowledgeGraph, roles: dict[str, AgentRole] | None = None,
                 limits: ExecutionLimits = ExecutionLimits(), log: AuditLog | None = None,
                 clock_start: datetime = SCENARIO_EPOCH, key_seed: bytes = b"g2cp"):
        self.graph = graph
        self.roles = roles or default_roles(graph)
        self.identities = {a: AgentIdentity.derive(a, r.permissions, key_seed) for a, r in self.roles.items()}
        self.roster = Roster(self.identities.values())
        self.agents: dict[str, Agent] = {a: AGENT_CLASSES.get(a, Agent)(a, graph) for a in self.roles}
        self.limits = limits
        self.log = log if log is not None else AuditLog()
        self.ledger = CommitmentLedger()
        self.trust = TrustState()
        self.events: list[SecurityEvent] = []
        self.transcript: list[TranscriptItem] = []
        self._queue: list[tuple[int, int, str, str]] = []  # (priority, send seq, receiver, envelope)
        self._sent = 0
        self._nonce: dict[str, int] = {}
        self._seen_nonce: dict[str, int] = {}
        self.clock_start = clock_start
        self.deliveries: dict[int, Delivery] = {}

    # -- sending

    def sign(self, message: Message) -> SignedEnvelope:
        ident = self.identities.get(message.sender)
        if ident is None:
            raise UnknownSender(message.sender)
        n = self._nonce.get(message.sender, 0) + 1
        self._nonce[message.sender] = n
        return sign_message(message, ident, n)

    def send(self, message: Message) -> SignedEnvelope:
        env = self.sign(message)
        self.post(env.text, message.receiver, PRIORITY[message.performative])
        return env

    def post(self, envelope_text: str, receiver: str, priority: int = 2) -> None:
        """Put raw envelope text on the wire, e.g. tampered or malformed traffic."""
        self._sent += 1
        heapq.heappush(self._queue, (priority, self._sent, receiver, envelope_text))

    @property
    def idle(self) -> bool:
        return not self._queue

    # -- delivery

    def _now(self) -> datetime:
        return self.clock_start + timedelta(seconds=len(self.log) + 1)

    def step(self) -> Delivery | None:
        """Deliver one message; returns the delivery or None if it was dropped."""
        _, _, receiver, text = heapq.heappop(self._queue)
        try:
            env = SignedEnvelope.from_text(text)
        except ParseError:
            return self._malformed(text, receiver)
        sender = env.sender
        try:
            good = verify_signature(env, self.roster)
        except UnknownSender:
            self.events.append(SecurityEvent("unknown-sender", sender))
            return None
        if not good:
            self.events.append(SecurityEvent("bad-signature", sender))
            update_trust(self.trust, sender, False)
            return None
        if env.nonce <= self._seen_nonce.get(sender, 0):
            self.events.append(SecurityEvent("replayed-nonce", sender, str(env.nonce)))
            return None
        self._seen_nonce[sender] = env.nonce
        try:
            msg = env.message()
        except G2CPError:
            return self._malformed(text, receiver)
        if msg.receiver != receiver or receiver not in self.agents:
            return self._malformed(text, receiver)

        now = self._now()
        before = self.graph.version
        outcome = process(msg, env.digest, now, self.graph, self.roster, self.limits)
        entry = self.log.append(env, outcome, before, self.graph.version, self.graph.digest(), now,
                                msg.context.conversation_id)
        self.ledger.observe(entry, msg, outcome)
        self.transcript.append(TranscriptItem(entry.seq, env.text, msg))
        if isinstance(msg.operation, Result):
            update_trust(self.trust, msg.sender, not outcome.problems)
        delivery = Delivery(entry.seq, msg, outcome)
        self.deliveries[entry.seq] = delivery
        agent = self.agents[receiver]
        if isinstance(outcome.payload, Error) and outcome.payload.code == "UNAUTHORIZED":
            agent.inbox.append(delivery)
            out = [agent.reply(msg, Performative.REJECT, outcome.payload)]
        elif outcome.problems:
            agent.inbox.append(delivery)
            out = [agent.reply(msg, Performative.REJECT,
                               Error("VALIDATION", "result does not replay: " + "; ".join(outcome.problems)))]
        else:
            out = agent.handle(delivery)
        for m in out:
            self.send(m)
        return delivery

    def _malformed(self, text: str, receiver: str) -> None:
        now = self._now()
        v = self.graph.version
        self.log.append(text, malformed_outcome(text, self.roster), v, v,
                        self.graph.digest(), now, "", kind="malformed")
        self.transcript.append(TranscriptItem(len(self.log), text, None))
        return None

    def pump(self, max_steps: int = 1000) -> int:
        steps = 0
        while self._queue:
            if steps >= max_steps:
                raise ScenarioTimeout(f"no quiescence after {max_steps} deliveries")
            self.step()
            steps += 1
        return steps


# ---------------------------------------------------------------- pattern discovery

@dataclass(frozen=True)
class Proposal:
    fault: str
    condition: str
    edge_type: str
    count: int
    total: int

    @property
    def confidence(self) -> float:
        return self.count / self.total

    @property
    def delta(self) -> GraphDelta:
        c = self.confidence
        prov = ProvenanceTag(SYNTHESIS, EPOCH, "", c)
        return GraphDelta(add_edges=(Edge(self.fault, self.condition, self.edge_type, c, EPOCH, prov),))


CONDITION_TYPES = ("Sensor", "Environment")


def _work_order_times(graph: KnowledgeGraph) -> dict[str, list[tuple[str, datetime]]]:
    """Fault-like node -> (work order, time) for every work order it occurred in."""
    out: dict[str, list[tuple[str, datetime]]] = {}
    for nid in sorted(graph.nodes):
        for e in graph.out_edges(nid):
            wo = graph.nodes[e.target]
            if e.type == "occurred_in" and wo.type == "WorkOrder" and isinstance(wo.attrs.get("ts"), datetime):
                out.setdefault(nid, []).append((wo.id, wo.attrs["ts"]))
    return {k: sorted(set(v)) for k, v in out.items()}


def _observations(graph: KnowledgeGraph) -> dict[str, list[datetime]]:
    out: dict[str, list[datetime]] = {}
    for nid in sorted(graph.nodes):
        if graph.nodes[nid].type in CONDITION_TYPES:
            times = sorted(e.ts for e in graph.out_edges(nid) if e.type == "observed_at")
            if times:
                out[nid] = times
    return out


def discover_patterns(graph: KnowledgeGraph, window: timedelta = timedelta(hours=48),
                      min_support: int = 5, min_ratio: float = 0.6) -> list[Proposal]:
    """Fault/condition pairs that co-occur often enough to propose an edge.

    A work order of fault f counts for condition c when some observation of c
    lies within ``window`` of the work order's time, inclusive.
    """
    orders = _work_order_times(graph)
    obs = _observations(graph)
    out = []
    for f, wos in orders.items():
        ftype = graph.nodes[f].type
        for c, times in obs.items():
            ctype = graph.nodes[c].type
            etype = next((t for t in PROPOSAL_EDGE_TYPES if graph.schema.allows_edge(ftype, t, ctype)), None)
            if etype is None or graph.has_edge_triple(f, etype, c):
                continue
            count = sum(1 for _, t in wos if any(abs(o - t) <= window for o in times))
            if count >= min_support and count / len(wos) >= min_ratio:
                out.append(Proposal(f, c, etype, count, len(wos)))
    return out


def proposal_message(p: Proposal, conversation_id: str) -> Message:
    return Message(SYNTHESIS, INGESTION, Performative.UPDATE, Update(p.delta),
                   ConversationContext(conversation_id))


# ---------------------------------------------------------------- scenarios

def fixture_dir() -> Path:
    env = os.environ.get("G2CP_FIXTURE_DIR")
    return Path(env) if env else Path(__file__).parent / "fixtures"


@dataclass(frozen=True)
class Scenario:
    name: str
    graph_fixture: Path
    user_query: str
    conversation_id: str = "conv_001"
    category: str = ""
    expected: dict = field(default_factory=dict)
    ftma: Path | None = None

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
            root = path.parent
            return cls(
                name=d["name"], graph_fixture=(root / d["graph"]).resolve(), user_query=d["query"],
                conversation_id=d.get("conversation_id", "conv_001"), category=d.get("category", ""),
                expected=d.get("expected", {}),
                ftma=(root / d["ftma"]).resolve() if d.get("ftma") else None,
            )
        except (KeyError, json.JSONDecodeError) as exc:
            raise ParseError(1, f"bad scenario file {path.name}: {exc}") from None


def scenario_paths() -> list[Path]:
    return sorted((fixture_dir() / "scenarios").glob("*.json"))


@dataclass(frozen=True)
class TokenReport:
    per_message: tuple[tuple[int, int], ...]
    total_inter_agent: int
    excluded: tuple[int, int] = (0, 0)  # user query, final response


def count_scenario_tokens(transcript: Iterable[TranscriptItem | str]) -> TokenReport:
    """Token totals over inter-agent message bodies (signature trailers and
    the user boundary are not counted)."""
    per = []
    for i, item in enumerate(transcript, start=1):
        if isinstance(item, str):
            per.append((i, token_count(item)))
        elif item.message is not None:
            per.append((item.seq, token_count(item.body)))
    return TokenReport(tuple(per), sum(t for _, t in per))


def load_ftma(path: str | Path) -> list[str]:
    """Message bodies of a free-text comparison transcript. Each message
    starts with a ``>>> sender -> receiver`` line; ``#`` lines are comments."""
    bodies: list[list[str]] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith(">>> "):
            bodies.append([])
        elif line.startswith("#") and not bodies:
            continue
        elif bodies:
            bodies[-1].append(line)
    return ["\n".join(b).strip() + "\n" for b in bodies]


@dataclass
class ScenarioRun:
    scenario: Scenario
    selection: Selection | None
    claim: Claim
    trace: ProvenanceTrace | None
    transcript: list[TranscriptItem]
    tokens: TokenReport
    bus: Bus
    initial: KnowledgeGraph
    response: str
    rejection: Message | None = None

    @property
    def messages(self) -> list[Message]:
        return [t.message for t in self.transcript if t.message is not None]

    @property
    def ledger(self) -> CommitmentLedger:
        return self.bus.ledger

    def transcript_text(self) -> str:
        return "".join(t.envelope + "\n" for t in self.transcript)


def _support(results: Iterable[Result]) -> tuple[set[str], set[EdgeRef]]:
    nodes: set[str] = set()
    edges: set[EdgeRef] = set()
    for r in results:
        n, e = r.support()
        nodes |= n
        edges |= e
    return nodes, edges


def _reached_by_all(result: Result, anchors: frozenset[str]) -> set[str]:
    adj: dict[str, set[str]] = {}
    for e in result.edges:
        adj.setdefault(e.source, set()).add(e.target)
    common = None
    for a in sorted(anchors):
        seen, stack = {a}, [a]
        while stack:
            for w in adj.get(stack.pop(), ()):
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        common = seen if common is None else common & seen
    return {v for v in (common or set()) if v.startswith("Fault:")}


def assemble_claim(bus: Bus, sel: Selection, conversation_id: str) -> tuple[Claim, list[int]]:
    """What the final answer asserts, and the audit entries backing it."""
    deliveries = [d for s, d in sorted(bus.deliveries.items())
                  if d.message.context.conversation_id == conversation_id]
    replies = [d for d in deliveries if isinstance(d.message.operation, Result) and not d.outcome.problems
               and d.message.performative in (Performative.INFORM, Performative.CONFIRM)]
    diag = next((d for d in replies if d.message.sender == DIAGNOSTIC), None)
    if sel.intent == "diagnostic" and diag is not None:
        result = diag.message.operation
        if relational(sel):
            return Claim(frozenset(_reached_by_all(result, sel.anchors))), [diag.seq]
        nodes: set[str] = set(result.ranked[:1])
        edges: set[EdgeRef] = set()
        trace = [diag.seq]
        for d in deliveries:
            if d.seq <= diag.seq:
                continue
            if d.message.performative is Performative.REQUEST and isinstance(d.outcome.payload, Result):
                r = d.outcome.payload
            elif d in replies:
                r = d.message.operation
            else:
                continue
            n, e = r.support()
            nodes |= n
            edges |= e
            trace.append(d.seq)
        return Claim(frozenset(nodes), frozenset(edges)), trace
    final = [d for d in replies if d.message.receiver == DISPATCHER]
    if not final:
        return Claim(), []
    n, e = final[-1].message.operation.support()
    return Claim(frozenset(n), frozenset(e)), [final[-1].seq]


def run_scenario(scenario: Scenario, limits: ExecutionLimits = ExecutionLimits(),
                 port: LanguagePort | None = None, graph: KnowledgeGraph | None = None,
                 max_steps: int = 1000) -> ScenarioRun:
    """Translate the query, pump the bus to quiescence, close the commitment
    horizon and assemble the grounded claim."""
    graph = graph if graph is not None else load_graph_file(scenario.graph_fixture)
    initial = graph.copy()
    bus = Bus(graph, limits=limits)
    port = port if port is not None else StubPort(graph)
    conv = scenario.conversation_id
    try:
        sel = select_operation(scenario.user_query, graph, port)
    except NoEntitiesLinked as exc:
        rej = Message(DISPATCHER, "User", Performative.REJECT, Error("NO_ENTITIES", str(exc)),
                      ConversationContext(conv))
        tokens = count_scenario_tokens([])
        tokens = TokenReport(tokens.per_message, 0, (token_count(scenario.user_query), 0))
        return ScenarioRun(scenario, None, Claim(), None, [], tokens, bus, initial, "", rej)
    bus.agents[DISPATCHER].selection = sel
    bus.send(Message(DISPATCHER, INTENT_AGENT[sel.intent], Performative.REQUEST, sel.operation,
                     ConversationContext(conv)))
    bus.pump(max_steps)
    bus.ledger.close(conv)
    claim, seqs = assemble_claim(bus, sel, conv)
    trace = ProvenanceTrace(claim, tuple(seqs)) if seqs else None
    response = port.render(claim)
    tokens = count_scenario_tokens(bus.transcript)
    tokens = TokenReport(tokens.per_message, tokens.total_inter_agent,
                         (token_count(scenario.user_query), token_count(response)))
    return ScenarioRun(scenario, sel, claim, trace, list(bus.transcript), tokens, bus, initial, response)


CONFIDENCE_TOL = 1e-9


def check_expectations(run: ScenarioRun) -> list[str]:
    """Differences between a run and its scenario's expectations."""
    exp = run.scenario.expected
    out = []
    if "messages" in exp and len(run.messages) != exp["messages"]:
        out.append(f"expected {exp['messages']} messages, got {len(run.messages)}")
    if "skeleton" in exp:
        got = [[m.sender, m.receiver, m.performative.value] for m in run.messages]
        if got != exp["skeleton"]:
            out.append(f"message skeleton differs: {got}")
    if "claim_nodes" in exp and set(exp["claim_nodes"]) != set(run.claim.nodes):
        out.append(f"claim nodes differ: {sorted(run.claim.nodes)}")
    if "claim_edges" in exp:
        got = {e.edge_id for e in run.claim.edges}
        if set(exp["claim_edges"]) != got:
            out.append(f"claim edges differ: {sorted(got)}")
    diag = next((m.operation for m in run.messages if m.sender == DIAGNOSTIC
                 and m.performative is Performative.INFORM and isinstance(m.operation, Result)), None)
    if "ranked" in exp and (diag is None or list(diag.ranked) != exp["ranked"]):
        out.append(f"ranked faults differ: {None if diag is None else list(diag.ranked)}")
    if "confidence" in exp:
        got = [] if diag is None else list(diag.confidence)
        if len(got) != len(exp["confidence"]) or any(
                abs(a - b) > CONFIDENCE_TOL for a, b in zip(got, exp["confidence"])):
            out.append(f"confidences differ: {got}")
    if "top_fault" in exp and (diag is None or diag.ranked[:1] != (exp["top_fault"],)):
        out.append(f"top fault differs: {None if diag is None else diag.ranked[:1]}")
    if "convergence" in exp:
        sel = run.selection
        reached = 0 if diag is None or sel is None else sum(
            1 for a in sel.anchors if exp.get("top_fault") in _reached_by_all(diag, frozenset({a})))
        if reached != exp["convergence"]:
            out.append(f"{reached} anchors reach the top fault, expected {exp['convergence']}")
    if "rejection" in exp:
        code = None if run.rejection is None else run.rejection.operation.code
        if code != exp["rejection"]:
            out.append(f"expected rejection {exp['rejection']}, got {code}")
    if "verdict" in exp:
        verdict = verify_run(run)
        if verdict.name != exp["verdict"]:
            out.append(f"expected verdict {exp['verdict']}, got {verdict.name}")
    if run.ledger.pending():
        out.append(f"{len(run.ledger.pending())} commitments still pending")
    return out


def verify_run(run: ScenarioRun):
    """Verdict on the run's final claim against its own audit log."""
    if run.trace is None:
        # nothing was traced, so only the empty claim is supported
        if not run.claim.nodes and not run.claim.edges:
            return Grounded()
        return Fabricated(frozenset(run.claim.nodes), frozenset(run.claim.edges))
    return verify_claim(run.claim, run.trace, run.bus.log, run.initial, run.bus.roster)
