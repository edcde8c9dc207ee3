"""Append-only, hash-chained audit log with replay verification.

Every delivered message is executed by ``process`` and logged together with
the digest of what that execution produced and the graph state afterwards.
Replay runs ``process`` again over a fresh copy of the initial graph and
compares digests entry by entry.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import IO, Iterable

from .errors import (BrokenChain, ConcurrentWriteConflict, CorruptEntry, G2CPError, SourceEmpty,
                     StorageFailure, UnknownNodeId, ValidationFailed)
from .graph import KnowledgeGraph, format_ts, parse_ts
from .protocol import (EdgeRef, Error, Message, Performative, Result, Traverse, Update,
                       parse_payload, serialize_payload)
from .security import Roster, SignedEnvelope, authorize, verify_signature
from .traversal import ExecutionLimits, TraversalResult, execute
from .update import apply_update, provenance_for

GENESIS = "0" * 64


# ---------------------------------------------------------------- execution

@dataclass(frozen=True)
class Outcome:
    """What the receiving side computed for one message."""

    payload: Result | Error | None = None
    problems: tuple[str, ...] = ()  # inconsistencies found in a carried result
    applied: bool = False
    traversal: TraversalResult | None = field(default=None, compare=False)

    def text(self) -> str:
        return "" if self.payload is None else serialize_payload(self.payload)


def _run(op: Traverse, graph: KnowledgeGraph, limits: ExecutionLimits, context):
    try:
        tr = execute(op, graph, limits, context)
    except (SourceEmpty, UnknownNodeId) as exc:
        return None, Error("SOURCE_EMPTY", str(exc))
    if tr.timed_out:
        return tr, Error("TIMEOUT", "traversal exceeded its time budget")
    return tr, None


def check_result(carried: Result, graph: KnowledgeGraph, limits: ExecutionLimits, context=None) -> list[str]:
    """Re-execute the traversal a result cites and list every disagreement.

    Without a cited traversal the result's support must simply exist in
    ``graph``.
    """
    if carried.source is None:
        nodes, edges = carried.support()
        out = [f"node {n} not in graph" for n in sorted(nodes) if n not in graph.nodes]
        out += [f"edge {e.edge_id} not in graph" for e in sorted(edges) if e.edge_id not in graph.edges]
        return out
    tr, err = _run(carried.source, graph, limits, context)
    if err is not None:
        return [f"cited traversal fails on replay: {err.code}"]
    base = tr.to_result(graph, carried.source)
    out = []
    if carried.format != base.format:
        out.append("format differs from replay")
    if carried.nodes != base.nodes:
        out.append(f"nodes differ from replay: extra {sorted(carried.nodes - base.nodes)}, "
                   f"missing {sorted(base.nodes - carried.nodes)}")
    if carried.edges != base.edges:
        out.append("edges differ from replay")
    if tuple(sorted(carried.paths, key=lambda p: (p.start, p.edges))) != base.paths:
        out.append("paths differ from replay")
    if carried.truncated != base.truncated:
        out.append("truncation flag differs from replay")
    if len(set(carried.ranked)) != len(carried.ranked):
        out.append("ranked list repeats a node")
    keys = []
    for v, c in zip(carried.ranked, carried.confidence):
        if v not in tr.confidence or v in tr.sources:
            out.append(f"ranked node {v} has no replayed confidence")
            continue
        if c != tr.confidence[v]:
            out.append(f"confidence of {v} is {c}, replay gives {tr.confidence[v]}")
        keys.append((-tr.convergence[v], -tr.confidence[v], v))
    if keys != sorted(keys):
        out.append("ranking order disagrees with replay")
    return out


def process(message: Message, envelope_digest: str, timestamp: datetime, graph: KnowledgeGraph,
            roster: Roster, limits: ExecutionLimits = ExecutionLimits()) -> Outcome:
    """Authorize and execute ``message`` against ``graph`` (mutating it for a
    valid UPDATE). Deterministic in its inputs, so replay can repeat it."""
    op = message.operation
    ctx = message.context
    if isinstance(op, (Traverse, Update)) and message.performative is not Performative.REJECT:
        decision = authorize(roster.permissions(message.sender), op, graph, ctx)
        if not decision:
            return Outcome(Error("UNAUTHORIZED", f"Unauthorized operation: {decision.reason}"))
    if isinstance(op, Traverse) and message.performative is not Performative.REJECT:
        tr, err = _run(op, graph, limits, ctx)
        if err is not None:
            return Outcome(err, traversal=tr)
        return Outcome(tr.to_result(graph, op), traversal=tr)
    if isinstance(op, Update):
        prov = provenance_for(message.sender, envelope_digest, timestamp=timestamp)
        try:
            apply_update(graph, op.delta, prov)
        except ValidationFailed as exc:
            return Outcome(Error("VALIDATION", "; ".join(exc.violations)))
        except ConcurrentWriteConflict as exc:
            return Outcome(Error("CONFLICT", str(exc)))
        return Outcome(applied=True)
    if isinstance(op, Result):
        return Outcome(problems=tuple(check_result(op, graph, limits, ctx)))
    return Outcome()


def result_digest(outcome: Outcome, version_after: int, state_digest: str) -> str:
    blob = json.dumps([outcome.text(), list(outcome.problems), outcome.applied, version_after, state_digest])
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------- entries

@dataclass(frozen=True)
class AuditEntry:
    seq: int
    envelope: str  # signed envelope text, verbatim
    outcome: str  # canonical text of the executed result, "" if none
    problems: tuple[str, ...]
    applied: bool
    result_digest: str
    version_before: int
    version_after: int
    state_digest: str
    timestamp: datetime
    conversation: str
    prev_hash: str
    entry_hash: str = ""
    kind: str = "message"  # or "malformed" for undecodable traffic

    def fields(self) -> dict:
        return {
            "seq": self.seq, "kind": self.kind, "envelope": self.envelope, "outcome": self.outcome,
            "problems": list(self.problems), "applied": self.applied,
            "result_digest": self.result_digest, "version_before": self.version_before,
            "version_after": self.version_after, "state_digest": self.state_digest,
            "timestamp": format_ts(self.timestamp), "conversation": self.conversation,
            "prev_hash": self.prev_hash,
        }

    def compute_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.fields(), sort_keys=True).encode()).hexdigest()

    def to_json(self) -> str:
        d = self.fields()
        d["entry_hash"] = self.entry_hash
        return json.dumps(d, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "AuditEntry":
        try:
            d = json.loads(line)
            return cls(
                seq=int(d["seq"]), envelope=d["envelope"], outcome=d["outcome"],
                problems=tuple(d["problems"]), applied=bool(d["applied"]),
                result_digest=d["result_digest"], version_before=int(d["version_before"]),
                version_after=int(d["version_after"]), state_digest=d["state_digest"],
                timestamp=parse_ts(d["timestamp"]), conversation=d["conversation"],
                prev_hash=d["prev_hash"], entry_hash=d["entry_hash"], kind=d.get("kind", "message"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptEntry(f"unreadable audit entry: {exc}") from None

    def signed(self) -> SignedEnvelope:
        return SignedEnvelope.from_text(self.envelope)

    def payload(self) -> Result | Error | None:
        return parse_payload(self.outcome) if self.outcome else None


class AuditLog:
    """Entries in append order. With ``path`` set every entry is written and
    flushed to disk before ``append`` returns."""

    def __init__(self, path: str | Path | None = None):
        self.entries: list[AuditEntry] = []
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.write_text("")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def head(self) -> str:
        return self.entries[-1].entry_hash if self.entries else GENESIS

    def append(self, envelope: SignedEnvelope | str, outcome: Outcome, version_before: int,
               version_after: int, state_digest: str, timestamp: datetime, conversation: str,
               kind: str = "message") -> AuditEntry:
        text = envelope if isinstance(envelope, str) else envelope.text
        entry = AuditEntry(
            seq=len(self.entries) + 1, envelope=text, outcome=outcome.text(), problems=outcome.problems,
            applied=outcome.applied, result_digest=result_digest(outcome, version_after, state_digest),
            version_before=version_before, version_after=version_after, state_digest=state_digest,
            timestamp=timestamp, conversation=conversation, prev_hash=self.head, kind=kind,
        )
        entry = _with_hash(entry)
        if self.path is not None:
            try:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(entry.to_json() + "\n")
                    fh.flush()
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
        self.entries.append(entry)
        return entry

    def dump(self, stream: IO[str]) -> None:
        for e in self.entries:
            stream.write(e.to_json() + "\n")

    @classmethod
    def load(cls, stream: IO[str]) -> "AuditLog":
        log = cls()
        for line in stream:
            if line.strip():
                log.entries.append(AuditEntry.from_json(line))
        return log

    @classmethod
    def load_file(cls, path) -> "AuditLog":
        with open(path, encoding="utf-8") as fh:
            return cls.load(fh)

    def conversation(self, conversation_id: str) -> list[AuditEntry]:
        return [e for e in self.entries if e.conversation == conversation_id]


def _with_hash(entry: AuditEntry) -> AuditEntry:
    return replace(entry, entry_hash=entry.compute_hash())


# ---------------------------------------------------------------- replay

@dataclass(frozen=True)
class EntryCheck:
    seq: int
    status: str  # MATCH | MISMATCH
    reasons: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status == "MATCH"


@dataclass
class ReplayReport:
    checks: list[EntryCheck]
    outcomes: dict[int, Outcome]  # recomputed, by seq
    messages: dict[int, Message]
    final_graph: KnowledgeGraph | None = None

    @property
    def all_match(self) -> bool:
        return all(c.ok for c in self.checks)

    def status(self, seq: int) -> EntryCheck:
        return next(c for c in self.checks if c.seq == seq)

    def mismatches(self) -> list[int]:
        return [c.seq for c in self.checks if not c.ok]


def malformed_outcome(text: str, roster: Roster) -> Outcome:
    """Outcome logged for traffic the receiver could not accept: a correctly
    signed message delivered to the wrong queue is misrouted, anything that
    does not decode is malformed."""
    try:
        env = SignedEnvelope.from_text(text)
        env.message()
        decodes = verify_signature(env, roster)
    except G2CPError:
        decodes = False
    return Outcome(Error("MALFORMED", "Misrouted message" if decodes else "Malformed message"))


def replay(log: AuditLog | Iterable[AuditEntry], initial: KnowledgeGraph, roster: Roster,
           limits: ExecutionLimits = ExecutionLimits(), strict: bool = False) -> ReplayReport:
    """Re-execute every logged message from the initial graph and compare.

    Signature, hash chain, version bookkeeping and result digest are all
    checked. ``strict`` raises on structural damage instead of reporting it.
    """
    entries = list(log)
    graph = initial.copy()
    if entries and entries[0].version_before != graph.version:
        raise BrokenChain(f"log starts at version {entries[0].version_before}, graph is at {graph.version}")
    prev = GENESIS
    checks, outcomes, messages = [], {}, {}
    for i, e in enumerate(entries):
        reasons = []
        if e.seq != i + 1:
            reasons.append(f"sequence number {e.seq}, expected {i + 1}")
        if e.prev_hash != prev:
            reasons.append("hash chain broken")
        if e.compute_hash() != e.entry_hash:
            reasons.append("entry hash does not match contents")
        prev = e.entry_hash
        if e.version_before != graph.version:
            if strict:
                raise BrokenChain(f"entry {e.seq}: version gap {graph.version} -> {e.version_before}")
            reasons.append(f"version_before {e.version_before}, replay is at {graph.version}")
        if e.kind == "malformed":
            outcome = malformed_outcome(e.envelope, roster)
        else:
            try:
                env = e.signed()
                msg = env.message()
            except G2CPError as exc:
                if strict:
                    raise CorruptEntry(f"entry {e.seq}: {exc}") from exc
                checks.append(EntryCheck(e.seq, "MISMATCH", tuple(reasons + [f"unreadable envelope: {exc}"])))
                continue
            messages[e.seq] = msg
            try:
                if not verify_signature(env, roster):
                    reasons.append("signature verification failed")
            except G2CPError as exc:
                reasons.append(f"signature check impossible: {exc}")
            if msg.context.conversation_id != e.conversation:
                reasons.append("conversation field disagrees with envelope")
            try:
                outcome = process(msg, env.digest, e.timestamp, graph, roster, limits)
            except G2CPError as exc:
                reasons.append(f"execution failed on replay: {exc}")
                checks.append(EntryCheck(e.seq, "MISMATCH", tuple(reasons)))
                continue
        outcomes[e.seq] = outcome
        if graph.version != e.version_after:
            reasons.append(f"version_after {e.version_after}, replay gives {graph.version}")
        state = graph.digest()
        if state != e.state_digest:
            reasons.append("graph state diverges from recorded state")
        if outcome.text() != e.outcome or outcome.problems != e.problems or outcome.applied != e.applied:
            reasons.append("recorded result differs from replay")
        if result_digest(outcome, graph.version, state) != e.result_digest:
            reasons.append("result digest differs from replay")
        checks.append(EntryCheck(e.seq, "MISMATCH" if reasons else "MATCH", tuple(reasons)))
    return ReplayReport(checks, outcomes, messages, graph)


# ---------------------------------------------------------------- claims

@dataclass(frozen=True)
class Claim:
    nodes: frozenset[str] = frozenset()
    edges: frozenset[EdgeRef] = frozenset()


@dataclass(frozen=True)
class ProvenanceTrace:
    claim: Claim
    entries: tuple[int, ...]  # audit seq numbers, ascending

    def __post_init__(self):
        if not self.entries:
            raise ValueError("a provenance trace needs at least one entry")
        if list(self.entries) != sorted(set(self.entries)):
            raise ValueError("trace entries must be strictly increasing")


@dataclass(frozen=True)
class Grounded:
    name = "Grounded"


@dataclass(frozen=True)
class Fabricated:
    missing_nodes: frozenset[str]
    missing_edges: frozenset[EdgeRef]
    name = "Fabricated"


@dataclass(frozen=True)
class FalsifiedTrace:
    entry: int
    reasons: tuple[str, ...] = ()
    name = "FalsifiedTrace"


Verdict = Grounded | Fabricated | FalsifiedTrace


def trace_support(report: ReplayReport, seqs: Iterable[int]) -> tuple[set[str], set[EdgeRef]]:
    """Union of the node/edge support of every result the entries produced
    or carried."""
    nodes: set[str] = set()
    edges: set[EdgeRef] = set()
    for seq in seqs:
        outcome = report.outcomes.get(seq)
        msg = report.messages.get(seq)
        results = []
        if outcome is not None and isinstance(outcome.payload, Result):
            results.append(outcome.payload)
        if msg is not None and isinstance(msg.operation, Result) and outcome is not None \
                and not outcome.problems:
            results.append(msg.operation)
        for r in results:
            n, e = r.support()
            nodes |= n
            edges |= e
    return nodes, edges


def verify_claim(claim: Claim, trace: ProvenanceTrace, log: AuditLog, initial: KnowledgeGraph,
                 roster: Roster, limits: ExecutionLimits = ExecutionLimits()) -> Verdict:
    known = {e.seq for e in log}
    missing = [s for s in trace.entries if s not in known]
    if missing:
        raise CorruptEntry(f"trace cites entries not in the log: {missing}")
    report = replay(log, initial, roster, limits)
    for seq in trace.entries:
        check = report.status(seq)
        if not check.ok:
            return FalsifiedTrace(seq, check.reasons)
        outcome = report.outcomes.get(seq)
        if outcome is not None and outcome.problems:
            return FalsifiedTrace(seq, outcome.problems)
    nodes, edges = trace_support(report, trace.entries)
    miss_n = frozenset(claim.nodes - nodes)
    miss_e = frozenset(claim.edges - edges)
    if miss_n or miss_e:
        return Fabricated(miss_n, miss_e)
    return Grounded()
