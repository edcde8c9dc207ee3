"""Message signing, role-based authorization and trust tracking."""

from __future__ import annotations

import base64
import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import ParseError, UnknownSender
from .graph import ByType, ContextRef, ExplicitIds, KnowledgeGraph, PropertyFilter, resolve_selector
from .protocol import Message, Traverse, Update, parse, serialize

SCHEME = "ed25519-sha256"
TRUST_ALPHA = 0.9
REVIEW_THRESHOLD = 0.5


class Action(str, Enum):
    READ = "READ"
    TRAVERSE = "TRAVERSE"
    UPDATE = "UPDATE"


@dataclass(frozen=True)
class Permission:
    action: Action
    node_types: frozenset[str]
    edge_types: frozenset[str]

    def __post_init__(self):
        if not self.node_types or not self.edge_types:
            raise ValueError("permission type sets must be nonempty")

    def covers(self, action: Action, node_types: Iterable[str], edge_types: Iterable[str]) -> bool:
        return (self.action == action and set(node_types) <= self.node_types
                and set(edge_types) <= self.edge_types)


def grant(action: Action | str, node_types: Iterable[str], edge_types: Iterable[str]) -> Permission:
    return Permission(Action(action), frozenset(node_types), frozenset(edge_types))


@dataclass
class AgentIdentity:
    agent_id: str
    private_key: Ed25519PrivateKey = field(repr=False)
    roles: frozenset[Permission] = frozenset()

    @classmethod
    def derive(cls, agent_id: str, roles: Iterable[Permission] = (), seed: bytes = b"g2cp") -> "AgentIdentity":
        """Deterministic key pair, so fixtures and logs are reproducible."""
        secret = hashlib.sha256(seed + b"/" + agent_id.encode()).digest()
        return cls(agent_id, Ed25519PrivateKey.from_private_bytes(secret), frozenset(roles))

    @property
    def public_key(self) -> Ed25519PublicKey:
        return self.private_key.public_key()

    @property
    def key_id(self) -> str:
        return key_id_of(self.public_key)


def key_id_of(public_key: Ed25519PublicKey) -> str:
    raw = public_key.public_bytes(Encoding.Raw, PublicFormat.Raw)
    return hashlib.sha256(raw).hexdigest()[:16]


@dataclass
class RosterEntry:
    public_key: Ed25519PublicKey
    roles: frozenset[Permission]

    @property
    def key_id(self) -> str:
        return key_id_of(self.public_key)


class Roster:
    """Registered agents: public keys and granted permissions."""

    def __init__(self, identities: Iterable[AgentIdentity] = ()):
        self._entries: dict[str, RosterEntry] = {}
        for ident in identities:
            self.register(ident)

    def register(self, identity: AgentIdentity) -> None:
        self._entries[identity.agent_id] = RosterEntry(identity.public_key, identity.roles)

    def __contains__(self, agent_id: str) -> bool:
        return agent_id in self._entries

    def entry(self, agent_id: str) -> RosterEntry:
        if agent_id not in self._entries:
            raise UnknownSender(agent_id)
        return self._entries[agent_id]

    def permissions(self, agent_id: str) -> frozenset[Permission]:
        return self.entry(agent_id).roles

    def agents(self) -> list[str]:
        return sorted(self._entries)


# ---------------------------------------------------------------- envelopes

@dataclass(frozen=True)
class SignedEnvelope:
    """Canonical message body plus a signed trailer.

    The signature covers the body and the ``NONCE`` line, byte for byte.
    """

    body: str
    nonce: int
    signature: bytes
    key_id: str
    scheme: str = SCHEME

    @property
    def signed_text(self) -> str:
        return f"{self.body}NONCE: {self.nonce}\n"

    @property
    def text(self) -> str:
        sig = base64.b64encode(self.signature).decode()
        return f"{self.signed_text}SIGNATURE: {sig}\nKEYID: {self.key_id}\nSCHEME: {self.scheme}\n"

    @property
    def sender(self) -> str:
        return self.body.split("\n", 1)[0].split(" TO ", 1)[0]

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def message(self) -> Message:
        return parse(self.body)

    @classmethod
    def from_text(cls, text: str) -> "SignedEnvelope":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if len(lines) < 5:
            raise ParseError(1, "envelope too short for a signed trailer")
        trailer = lines[-4:]
        keys = ("NONCE: ", "SIGNATURE: ", "KEYID: ", "SCHEME: ")
        for i, (line, key) in enumerate(zip(trailer, keys)):
            if not line.startswith(key):
                raise ParseError(len(lines) - 3 + i, f"expected {key.strip()} trailer line")
        vals = [line[len(k):] for line, k in zip(trailer, keys)]
        try:
            nonce = int(vals[0])
            sig = base64.b64decode(vals[1], validate=True)
        except ValueError as exc:
            raise ParseError(len(lines) - 3, f"bad trailer: {exc}") from None
        return cls("\n".join(lines[:-4]) + "\n", nonce, sig, vals[2], vals[3])


def _hash(text: str) -> bytes:
    return hashlib.sha256(text.encode()).digest()


def sign(message: Message | str, identity: AgentIdentity, nonce: int) -> SignedEnvelope:
    body = message if isinstance(message, str) else serialize(message)
    unsigned = SignedEnvelope(body, nonce, b"", identity.key_id)
    sig = identity.private_key.sign(_hash(unsigned.signed_text))
    return SignedEnvelope(body, nonce, sig, identity.key_id)


def verify_signature(envelope: SignedEnvelope, roster: Roster) -> bool:
    """True iff the named sender's registered key signed exactly this body."""
    entry = roster.entry(envelope.sender)
    if envelope.scheme != SCHEME or envelope.key_id != entry.key_id:
        return False
    try:
        entry.public_key.verify(envelope.signature, _hash(envelope.signed_text))
    except InvalidSignature:
        return False
    return True


# ---------------------------------------------------------------- authorization

@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.allowed


ALLOW = Decision(True)


def _source_types(op: Traverse, graph: KnowledgeGraph | None, context=None) -> set[str]:
    sel = op.source
    if isinstance(sel, ExplicitIds):
        return {i.split(":", 1)[0] for i in sel.ids}
    if isinstance(sel, ByType):
        return set(sel.types)
    if isinstance(sel, PropertyFilter):
        return {sel.node_type}
    if graph is None:
        raise ValueError("selector needs a graph to determine its node types")
    if isinstance(sel, ContextRef) and context is None:
        return set()
    return {i.split(":", 1)[0] for i in resolve_selector(sel, graph, context)}


def authorize(permissions: Iterable[Permission], operation, graph: KnowledgeGraph | None = None,
              context=None) -> Decision:
    """Decide whether a holder of ``permissions`` may issue ``operation``.

    A traversal needs one TRAVERSE grant covering every via type and every
    source node type; an update needs one UPDATE grant covering every node
    and edge type it touches.
    """
    perms = list(permissions)
    if isinstance(operation, Traverse):
        node_types = _source_types(operation, graph, context)
        if any(p.covers(Action.TRAVERSE, node_types, operation.via) for p in perms):
            return ALLOW
        if not any(p.action == Action.TRAVERSE for p in perms):
            return Decision(False, "no TRAVERSE grant")
        return Decision(False, f"no TRAVERSE grant covers {sorted(node_types)} via {sorted(operation.via)}")
    if isinstance(operation, Update):
        if not any(p.action == Action.UPDATE for p in perms):
            return Decision(False, "no UPDATE grant")
        if graph is None:
            raise ValueError("update authorization needs the target graph")
        d = operation.delta
        node_types, edge_types = d.touched_node_types(graph), d.touched_edge_types(graph)
        if any(p.action == Action.UPDATE and node_types <= p.node_types and edge_types <= p.edge_types
               for p in perms):
            return ALLOW
        return Decision(False, f"no UPDATE grant covers {sorted(node_types)} / {sorted(edge_types)}")
    return ALLOW  # results and errors carry no graph operation


# ---------------------------------------------------------------- trust

@dataclass(frozen=True)
class HumanReview:
    agent: str
    score: float


@dataclass
class TrustState:
    scores: dict[str, float] = field(default_factory=dict)
    alpha: float = TRUST_ALPHA
    review_threshold: float = REVIEW_THRESHOLD
    initial: float = 1.0
    events: list[HumanReview] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

    def score(self, agent: str) -> float:
        return self.scores.get(agent, self.initial)


def update_trust(state: TrustState, agent: str, verified: bool) -> float:
    """Exponential moving average of verification outcomes; emits a
    HumanReview event whenever the new score is below the threshold."""
    new = state.alpha * state.score(agent) + (1.0 - state.alpha) * (1.0 if verified else 0.0)
    state.scores[agent] = new
    if new < state.review_threshold:
        state.events.append(HumanReview(agent, new))
    return new
